//! Fixture file kinds and their loaders.

use std::path::Path;

use momex_core::exam::{FixtureError, University};
use momex_core::ims::{parse_subscribers, SubscriberProfile};
use momex_core::ue::Scenario;

fn read(path: &Path) -> Result<String, FixtureError> {
    std::fs::read_to_string(path).map_err(|e| FixtureError {
        file: Some(path.to_path_buf()),
        line: 0,
        message: e.to_string(),
    })
}

fn line_at(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

pub fn load_subscribers(path: &Path) -> Result<Vec<SubscriberProfile>, FixtureError> {
    let text = read(path)?;
    parse_subscribers(&text).map_err(|e| FixtureError {
        file: Some(path.to_path_buf()),
        line: e.span().map_or(1, |s| line_at(&text, s.start)),
        message: e.message().to_owned(),
    })
}

/// Checks one file, picking the schema from its top-level tables.
pub fn validate(path: &Path) -> Result<&'static str, FixtureError> {
    let text = read(path)?;
    let keys = match text.parse::<toml::Table>() {
        Ok(t) => t,
        // let the university parser report the syntax error
        Err(_) => return University::load(path).map(|_| "university"),
    };
    if keys.contains_key("subscriber") {
        load_subscribers(path).map(|_| "subscribers")
    } else if keys.contains_key("ue") || keys.contains_key("step") {
        Scenario::load(path).map(|_| "scenario")
    } else {
        University::load(path).map(|_| "university")
    }
}
