//! JSON Lines manifests describing an evaluation corpus.
//!
//! One object per line:
//!
//! ```text
//! {"path": "s01/p03_r2.wav", "speaker": "s01", "phrase": "turn on the lights",
//!  "session": "day1", "mic": "near", "rep": 2}
//! {"path": "s01/read_04.wav", "speaker": "s01", "phrase": "AGGRESSOR", "session": "day1"}
//! ```
//!
//! `mic` defaults to `unspecified`. Relative paths resolve against the
//! manifest's directory. Blank lines and lines starting with `#` are skipped.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

use super::EvalError;

/// Phrase id marking out-of-domain speech.
pub const AGGRESSOR: &str = "AGGRESSOR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MicCondition {
    Near,
    Far,
    Unspecified,
}

impl MicCondition {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Near => "near",
            Self::Far => "far",
            Self::Unspecified => "unspecified",
        }
    }
}

impl std::str::FromStr for MicCondition {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "near" => Ok(Self::Near),
            "far" => Ok(Self::Far),
            "unspecified" => Ok(Self::Unspecified),
            other => Err(format!("unknown mic condition `{other}` (expected near|far|unspecified)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PhraseRef {
    Phrase(String),
    Aggressor,
}

impl PhraseRef {
    pub fn phrase(&self) -> Option<&str> {
        match self {
            Self::Phrase(p) => Some(p),
            Self::Aggressor => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub audio_path: PathBuf,
    pub speaker_id: String,
    pub phrase: PhraseRef,
    pub session_id: String,
    pub mic: MicCondition,
    /// Repetition index; `None` exactly for aggressor entries.
    pub rep: Option<u32>,
}

impl ManifestEntry {
    pub fn is_aggressor(&self) -> bool {
        self.phrase == PhraseRef::Aggressor
    }

    /// Key used for canonical ordering, independent of manifest row order.
    pub(crate) fn sort_key(&self) -> (&str, &str, &PhraseRef, Option<u32>, &Path) {
        (
            &self.speaker_id,
            &self.session_id,
            &self.phrase,
            self.rep,
            &self.audio_path,
        )
    }
}

fn parse_error(line: usize, field: &str, reason: impl Into<String>) -> EvalError {
    EvalError::Parse {
        line,
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn string_field(obj: &Map<String, Value>, line: usize, field: &str) -> Result<String, EvalError> {
    match obj.get(field) {
        Some(Value::String(s)) if !s.is_empty() => Ok(s.clone()),
        Some(Value::String(_)) => Err(parse_error(line, field, "must not be empty")),
        Some(other) => Err(parse_error(line, field, format!("expected a string, got {other}"))),
        None => Err(parse_error(line, field, "missing")),
    }
}

const FIELDS: [&str; 6] = ["path", "speaker", "phrase", "session", "mic", "rep"];

/// Parses manifest text without touching the filesystem.
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<Vec<ManifestEntry>, EvalError> {
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let obj = match serde_json::from_str::<Value>(trimmed) {
            Ok(Value::Object(o)) => o,
            Ok(_) => return Err(parse_error(line, "<record>", "expected a JSON object")),
            Err(e) => return Err(parse_error(line, "<record>", e.to_string())),
        };
        if let Some(unknown) = obj.keys().find(|k| !FIELDS.contains(&k.as_str())) {
            return Err(parse_error(line, unknown, "unknown field"));
        }

        let path = PathBuf::from(string_field(&obj, line, "path")?);
        let speaker_id = string_field(&obj, line, "speaker")?;
        let phrase_raw = string_field(&obj, line, "phrase")?;
        let session_id = string_field(&obj, line, "session")?;
        let mic = match obj.get("mic") {
            None | Some(Value::Null) => MicCondition::Unspecified,
            Some(Value::String(s)) => s.parse().map_err(|e: String| parse_error(line, "mic", e))?,
            Some(other) => return Err(parse_error(line, "mic", format!("expected a string, got {other}"))),
        };
        let rep = match obj.get("rep") {
            None | Some(Value::Null) => None,
            Some(v) => Some(
                v.as_u64()
                    .and_then(|r| u32::try_from(r).ok())
                    .ok_or_else(|| parse_error(line, "rep", format!("expected a non-negative integer, got {v}")))?,
            ),
        };

        let phrase = if phrase_raw == AGGRESSOR {
            if rep.is_some() {
                return Err(parse_error(line, "rep", "aggressor entries carry no repetition index"));
            }
            PhraseRef::Aggressor
        } else {
            if rep.is_none() {
                return Err(parse_error(line, "rep", "missing (required for phrase entries)"));
            }
            PhraseRef::Phrase(phrase_raw.clone())
        };

        let audio_path = if path.is_absolute() { path } else { base_dir.join(path) };
        let key = match &phrase {
            PhraseRef::Phrase(p) => (speaker_id.clone(), p.clone(), session_id.clone(), format!("{}", rep.unwrap())),
            PhraseRef::Aggressor => (
                speaker_id.clone(),
                AGGRESSOR.to_string(),
                session_id.clone(),
                audio_path.display().to_string(),
            ),
        };
        if !seen.insert(key) {
            return Err(EvalError::DuplicateEntry {
                line,
                speaker: speaker_id,
                phrase: phrase_raw,
                session: session_id,
                rep,
            });
        }
        entries.push(ManifestEntry {
            audio_path,
            speaker_id,
            phrase,
            session_id,
            mic,
            rep,
        });
    }
    Ok(entries)
}

/// Reads and validates a manifest; every referenced audio file must exist.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>, EvalError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let entries = parse_manifest(&text, base)?;
    let missing: Vec<PathBuf> = entries
        .iter()
        .filter(|e| !e.audio_path.is_file())
        .map(|e| e.audio_path.clone())
        .collect();
    if !missing.is_empty() {
        return Err(EvalError::MissingAudio(missing));
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"
{"path": "a.wav", "speaker": "s1", "phrase": "hello", "session": "d1", "mic": "near", "rep": 0}
{"path": "b.wav", "speaker": "s1", "phrase": "hello", "session": "d1", "mic": "far", "rep": 1}
# comment
{"path": "/abs/c.wav", "speaker": "s1", "phrase": "AGGRESSOR", "session": "d2"}
"#;

    #[test]
    fn well_formed_manifest() {
        let e = parse_manifest(GOOD, Path::new("/data")).unwrap();
        assert_eq!(e.len(), 3);
        assert_eq!(e[0].audio_path, PathBuf::from("/data/a.wav"));
        assert_eq!(e[1].mic, MicCondition::Far);
        assert_eq!(e[2].audio_path, PathBuf::from("/abs/c.wav"));
        assert!(e[2].is_aggressor());
        assert_eq!(e[2].rep, None);
        assert_eq!(e[2].mic, MicCondition::Unspecified);
    }

    fn field_of(text: &str) -> (usize, String) {
        match parse_manifest(text, Path::new(".")) {
            Err(EvalError::Parse { line, field, .. }) => (line, field),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_mic_names_the_field() {
        let text = "\n{\"path\": \"a.wav\", \"speaker\": \"s\", \"phrase\": \"p\", \"session\": \"d\", \"mic\": \"medium\", \"rep\": 1}";
        assert_eq!(field_of(text), (2, "mic".to_string()));
    }

    #[test]
    fn field_errors() {
        assert_eq!(
            field_of(r#"{"path": "a.wav", "phrase": "p", "session": "d", "rep": 1}"#).1,
            "speaker"
        );
        assert_eq!(
            field_of(r#"{"path": "a.wav", "speaker": "s", "phrase": "p", "session": "d"}"#).1,
            "rep"
        );
        assert_eq!(
            field_of(r#"{"path": "a.wav", "speaker": "s", "phrase": "AGGRESSOR", "session": "d", "rep": 0}"#).1,
            "rep"
        );
        assert_eq!(
            field_of(r#"{"path": "a.wav", "speaker": "s", "phrase": "p", "session": "d", "rep": -1}"#).1,
            "rep"
        );
        assert_eq!(
            field_of(r#"{"path": "a.wav", "speaker": "s", "phrase": "p", "session": "d", "rep": 1, "x": 2}"#).1,
            "x"
        );
        assert_eq!(field_of("not json").1, "<record>");
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        let text = r#"{"path": "a.wav", "speaker": "s", "phrase": "p", "session": "d", "rep": 1}
{"path": "b.wav", "speaker": "s", "phrase": "p", "session": "d", "rep": 1}"#;
        assert!(matches!(
            parse_manifest(text, Path::new(".")),
            Err(EvalError::DuplicateEntry { line: 2, .. })
        ));
    }

    #[test]
    fn missing_audio_lists_paths() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.wav"), b"").unwrap();
        let m = dir.path().join("m.jsonl");
        std::fs::write(
            &m,
            r#"{"path": "a.wav", "speaker": "s", "phrase": "p", "session": "d", "rep": 1}
{"path": "gone.wav", "speaker": "s", "phrase": "p", "session": "d", "rep": 2}
{"path": "gone2.wav", "speaker": "s", "phrase": "AGGRESSOR", "session": "d"}"#,
        )
        .unwrap();
        match load_manifest(&m) {
            Err(EvalError::MissingAudio(paths)) => {
                assert_eq!(paths, vec![dir.path().join("gone.wav"), dir.path().join("gone2.wav")]);
            }
            other => panic!("{other:?}"),
        }
    }
}
