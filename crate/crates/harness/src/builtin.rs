//! Scenarios shipped with the binary.

use std::path::Path;

pub const BUILTINS: &[(&str, &str)] = &[
    ("ant", include_str!("../scenarios/ant.scn")),
    ("ddos", include_str!("../scenarios/ddos.scn")),
    ("video_centralized", include_str!("../scenarios/video_centralized.scn")),
    ("video_dataplane", include_str!("../scenarios/video_dataplane.scn")),
    ("zero", include_str!("../scenarios/zero.scn")),
];

pub fn builtin(name: &str) -> Option<&'static str> {
    BUILTINS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

/// Contents of the file at `spec`, or of the built-in scenario so named.
/// A readable file wins over a built-in of the same name.
pub fn load(spec: &str) -> std::io::Result<String> {
    if Path::new(spec).is_file() {
        return std::fs::read_to_string(spec);
    }
    builtin(spec).map(str::to_string).ok_or_else(|| {
        std::io::Error::new(std::io::ErrorKind::NotFound, format!("no file or built-in scenario named `{spec}`"))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Scenario;

    #[test]
    fn every_builtin_parses_and_validates() {
        for (name, text) in BUILTINS {
            let sc = Scenario::parse(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(sc.name, *name);
            sc.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn unknown_names_are_not_found() {
        assert_eq!(load("no-such-scenario").unwrap_err().kind(), std::io::ErrorKind::NotFound);
        assert!(load("ddos").unwrap().contains("ddos_detector"));
    }
}
