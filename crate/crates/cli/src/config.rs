//! Configuration files: TOML by `.toml` extension, JSON otherwise.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;

use crate::{Category, CliError, CliResult};

pub fn parse<T: DeserializeOwned>(text: &str, toml_syntax: bool) -> Result<T, String> {
    if toml_syntax {
        toml::from_str(text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }
}

pub fn load_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let toml_syntax = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    parse(&text, toml_syntax).map_err(|e| {
        CliError::new(
            Category::Config,
            format!("{}: {}", path.display(), e.replace('\n', " ")),
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use genvendor::harness::ExperimentConfig;
    use genvendor::DgpKind;

    #[test]
    fn toml_and_json_agree() {
        let a: ExperimentConfig = parse(
            "dgp = \"c\"\nreplications = 3\n[costs]\nc = 1.0\ns = 0.25\n",
            true,
        )
        .unwrap();
        let b: ExperimentConfig = parse(
            r#"{"dgp":"c","replications":3,"costs":{"c":1.0,"s":0.25}}"#,
            false,
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dgp, DgpKind::C);
        assert_eq!(a.n, ExperimentConfig::default().n);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse::<ExperimentConfig>("replicates = 3", true).is_err());
        assert!(parse::<ExperimentConfig>(r#"{"cdgm":{"epoch":3}}"#, false).is_err());
    }
}
