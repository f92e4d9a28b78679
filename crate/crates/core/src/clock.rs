use chrono::{DateTime, Utc};

/// Wall clock, or a fixed instant for reproducible output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Clock {
    #[default]
    System,
    Fixed(DateTime<Utc>),
}

impl Clock {
    /// Environment variable holding an RFC 3339 instant that freezes the clock.
    pub const FIXED_ENV: &'static str = "QELOOP_FIXED_CLOCK";

    pub fn now(&self) -> DateTime<Utc> {
        match self {
            Clock::System => Utc::now(),
            Clock::Fixed(t) => *t,
        }
    }

    /// `Fixed` when `QELOOP_FIXED_CLOCK` parses, `System` otherwise.
    pub fn from_env() -> Self {
        std::env::var(Self::FIXED_ENV)
            .ok()
            .and_then(|v| DateTime::parse_from_rfc3339(v.trim()).ok())
            .map_or(Clock::System, |t| Clock::Fixed(t.with_timezone(&Utc)))
    }

    pub fn fixed_epoch() -> Self {
        Clock::Fixed(DateTime::<Utc>::UNIX_EPOCH)
    }
}
