use std::path::Path;

use serde::de::DeserializeOwned;
use serde_path_to_error::Segment;

use crate::error::{Error, Result};

/// Converts a deserializer path into a JSON pointer.
fn pointer(path: &serde_path_to_error::Path) -> String {
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    out
}

pub fn parse_config<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
        pointer: pointer(e.path()),
        detail: e.into_inner().to_string(),
    })
}

/// Reads a JSON config, or the defaults when no path is given.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            parse_config(&text)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::{AblationConfig, TrainConfig};

    fn pointer_of<T: DeserializeOwned>(text: &str) -> String {
        match parse_config::<T>(text) {
            Err(Error::Config { pointer, .. }) => pointer,
            Err(other) => panic!("{other}"),
            Ok(_) => panic!("parsed"),
        }
    }

    #[test]
    fn errors_point_into_the_document() {
        assert_eq!(pointer_of::<TrainConfig>(r#"{"optimizer": {"lr": "fast"}}"#), "/optimizer/lr");
        assert_eq!(pointer_of::<TrainConfig>(r#"{"epochs": 3, "epocs": 4}"#), "/epocs");
        assert_eq!(
            pointer_of::<AblationConfig>(r#"{"modes": ["rmi", "rmi+samcl"]}"#),
            "/modes/1"
        );
    }

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(parse_config::<TrainConfig>("{}").unwrap(), TrainConfig::default());
        assert!(matches!(parse_config::<TrainConfig>("{"), Err(Error::Config { .. })));
    }
}
