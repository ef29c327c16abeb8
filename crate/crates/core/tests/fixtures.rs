use std::path::Path;

use momex_core::exam::University;

fn dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

#[test]
fn sample_university_loads() {
    let u = University::load(&dir().join("university.toml")).unwrap();
    assert_eq!(u.users.len(), 5);
    assert_eq!(u.questions.len(), 20);
}

#[test]
fn invalid_fixtures_name_file_and_line() {
    let invalid = dir().join("invalid");
    let manifest: toml::Value =
        toml::from_str(&std::fs::read_to_string(invalid.join("expected.toml")).unwrap()).unwrap();
    let cases = manifest["case"].as_array().unwrap();
    assert!(cases.len() >= 10);
    for case in cases {
        let file = case["file"].as_str().unwrap();
        let path = invalid.join(file);
        let e = University::load(&path).unwrap_err();
        assert_eq!(e.file.as_deref(), Some(path.as_path()));
        assert_eq!(
            e.line as i64,
            case["line"].as_integer().unwrap(),
            "{file}: {e}"
        );
        let msg = case["message"].as_str().unwrap();
        assert!(e.message.contains(msg), "{file}: {e}");
        assert!(e
            .to_string()
            .starts_with(&format!("{}:{}: ", path.display(), e.line)));
    }
}

#[test]
fn every_invalid_file_is_listed() {
    let invalid = dir().join("invalid");
    let manifest = std::fs::read_to_string(invalid.join("expected.toml")).unwrap();
    for entry in std::fs::read_dir(&invalid).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        if name != "expected.toml" {
            assert!(
                manifest.contains(&format!("\"{name}\"")),
                "{name} not in manifest"
            );
        }
    }
}
