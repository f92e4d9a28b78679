//! Bundled sample project (a small online-banking requirement set) used by
//! the documentation, the golden tests and `qeloop init-sample`.

use crate::artefact::{parse_gherkin, parse_requirements, parse_testcases, Corpus};

pub const REQUIREMENTS: &str = include_str!("../data/sample/requirements.txt");
pub const TESTCASES: &str = include_str!("../data/sample/testcases.txt");
pub const FEATURE: &str = include_str!("../data/sample/notifications.feature");
pub const CONFIG: &str = include_str!("../data/sample/qeloop.toml");
/// `REQUIREMENTS` degraded at d = 0.6 without ambiguity injection.
pub const DEGRADED: &str = include_str!("../data/sample/degraded_0.6.txt");

pub const PROJECT_ID: &str = "banking";

pub fn requirements() -> Corpus {
    parse_requirements(REQUIREMENTS)
        .expect("sample requirements parse")
        .with_project_id(PROJECT_ID)
}

pub fn testcases() -> Corpus {
    parse_testcases(TESTCASES)
        .expect("sample test cases parse")
        .with_project_id(PROJECT_ID)
}

pub fn scenarios() -> Corpus {
    parse_gherkin(FEATURE)
        .expect("sample feature parses")
        .with_project_id(PROJECT_ID)
}

pub fn degraded() -> Corpus {
    parse_requirements(DEGRADED)
        .expect("degraded sample parses")
        .with_project_id(PROJECT_ID)
}
