use std::path::Path;

use super::benchmark::{Conversation, Segment};
use crate::error::{Error, Result};

/// Speaker turn as it appears in an RTTM file.
#[derive(Clone, Debug, PartialEq)]
pub struct RttmTurn {
    pub conversation_id: String,
    pub onset_s: f64,
    pub duration_s: f64,
    pub speaker: String,
}

pub fn rttm_line(s: &Segment) -> String {
    format!(
        "SPEAKER {} 1 {:.3} {:.3} <NA> <NA> {} <NA> <NA>",
        s.conversation_id, s.onset_s, s.duration_s, s.voice
    )
}

pub fn rttm_string(conversations: &[Conversation]) -> String {
    let mut out = String::new();
    for s in conversations.iter().flat_map(|c| &c.segments) {
        out.push_str(&rttm_line(s));
        out.push('\n');
    }
    out
}

pub fn rttm_write(conversations: &[Conversation], path: &Path) -> Result<()> {
    std::fs::write(path, rttm_string(conversations)).map_err(|e| Error::io(path, e))
}

/// Parses `SPEAKER <conv> 1 <onset> <dur> <NA> <NA> <speaker> <NA> <NA>`
/// lines; fields may be separated by any run of whitespace and blank lines
/// are skipped.
pub fn rttm_parse(text: &str, path: &Path) -> Result<Vec<RttmTurn>> {
    let mut turns = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let fail = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        if fields.len() != 10 {
            return Err(fail(format!("expected 10 fields, found {}", fields.len())));
        }
        if fields[0] != "SPEAKER" {
            return Err(fail(format!("expected SPEAKER, found {:?}", fields[0])));
        }
        if fields[2] != "1" {
            return Err(fail(format!("expected channel 1, found {:?}", fields[2])));
        }
        for k in [5, 6, 8, 9] {
            if fields[k] != "<NA>" {
                return Err(fail(format!("expected <NA> in field {}, found {:?}", k + 1, fields[k])));
            }
        }
        let number = |s: &str, what: &str| -> Result<f64> {
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(fail(format!("{what} {s:?} is not a number"))),
            }
        };
        let onset = number(fields[3], "onset")?;
        let duration = number(fields[4], "duration")?;
        if onset < 0.0 || duration <= 0.0 {
            return Err(fail(format!("onset {onset} / duration {duration} out of range")));
        }
        turns.push(RttmTurn {
            conversation_id: fields[1].to_string(),
            onset_s: onset,
            duration_s: duration,
            speaker: fields[7].to_string(),
        });
    }
    Ok(turns)
}

pub fn rttm_read(path: &Path) -> Result<Vec<RttmTurn>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    rttm_parse(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Language;

    fn seg(onset: f64, dur: f64, voice: &str) -> Segment {
        Segment {
            conversation_id: "conv1".into(),
            onset_s: onset,
            duration_s: dur,
            clip_id: "x".into(),
            voice: voice.into(),
            lang: Language::En,
        }
    }

    #[test]
    fn line_format() {
        assert_eq!(
            rttm_line(&seg(0.0, 2.5, "voiceA")),
            "SPEAKER conv1 1 0.000 2.500 <NA> <NA> voiceA <NA> <NA>"
        );
    }

    #[test]
    fn parse_tolerates_whitespace() {
        let t = rttm_parse("  SPEAKER conv1  1 0.000\t2.500 <NA> <NA> voiceA <NA> <NA>  \n\n", Path::new("x")).unwrap();
        assert_eq!(
            t,
            vec![RttmTurn {
                conversation_id: "conv1".into(),
                onset_s: 0.0,
                duration_s: 2.5,
                speaker: "voiceA".into()
            }]
        );
    }

    #[test]
    fn non_numeric_onset_names_line() {
        let text = "SPEAKER c 1 0.000 1.000 <NA> <NA> a <NA> <NA>\nSPEAKER c 1 abc 1.000 <NA> <NA> a <NA> <NA>\n";
        match rttm_parse(text, Path::new("f.rttm")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_shape_rejected() {
        for bad in [
            "SPEAKER c 1 0.0 1.0 <NA> <NA> a <NA>",
            "LEXEME c 1 0.0 1.0 <NA> <NA> a <NA> <NA>",
            "SPEAKER c 2 0.0 1.0 <NA> <NA> a <NA> <NA>",
            "SPEAKER c 1 0.0 0.0 <NA> <NA> a <NA> <NA>",
        ] {
            assert!(rttm_parse(bad, Path::new("f")).is_err(), "{bad}");
        }
    }
}
