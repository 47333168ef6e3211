//! Phone transcripts: one utterance per line, space-separated symbols,
//! optionally prefixed by `id<TAB>`. An empty line is an empty transcript.

use std::collections::HashMap;

use crate::Failure;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Line {
    pub id: Option<String>,
    pub phones: Vec<String>,
}

pub fn parse(text: &str) -> Vec<Line> {
    text.lines()
        .map(|l| match l.split_once('\t') {
            Some((id, rest)) => Line {
                id: Some(id.trim().to_string()),
                phones: rest.split_whitespace().map(str::to_string).collect(),
            },
            None => Line {
                id: None,
                phones: l.split_whitespace().map(str::to_string).collect(),
            },
        })
        .collect()
}

pub fn format_line(phones: &[&str]) -> String {
    format!("{}\n", phones.join(" "))
}

pub type Paired = (String, Vec<String>, Vec<String>);

/// `(id, hyp, ref)` triples in reference order. Lines pair by id when every
/// line of both files carries one, by position otherwise.
pub fn pair(hyp: &[Line], reference: &[Line]) -> Result<Vec<Paired>, Failure> {
    let keyed = hyp.iter().chain(reference).all(|l| l.id.is_some());
    if keyed {
        let mut by_id: HashMap<&str, &Line> = HashMap::new();
        for l in hyp {
            if by_id.insert(l.id.as_deref().unwrap_or(""), l).is_some() {
                return Err(Failure::Data(format!("duplicate hypothesis id `{}`", l.id.as_deref().unwrap_or(""))));
            }
        }
        reference
            .iter()
            .map(|r| {
                let id = r.id.clone().unwrap_or_default();
                let h = by_id
                    .get(id.as_str())
                    .ok_or_else(|| Failure::Data(format!("no hypothesis for `{id}`")))?;
                Ok((id, h.phones.clone(), r.phones.clone()))
            })
            .collect()
    } else {
        if hyp.len() != reference.len() {
            return Err(Failure::Data(format!(
                "{} hypothesis lines for {} reference lines",
                hyp.len(),
                reference.len()
            )));
        }
        Ok(hyp
            .iter()
            .zip(reference)
            .enumerate()
            .map(|(i, (h, r))| (r.id.clone().unwrap_or_else(|| format!("line{}", i + 1)), h.phones.clone(), r.phones.clone()))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keyed_and_positional() {
        let h = parse("b\tx y\na\tp\n");
        let r = parse("a\tp q\nb\tx y\n");
        let p = pair(&h, &r).unwrap();
        assert_eq!(p[0], ("a".into(), vec!["p".into()], vec!["p".into(), "q".into()]));
        let p = pair(&parse("p q\n\nr\n"), &parse("p\nq\nr\n")).unwrap();
        assert_eq!(p.len(), 3);
        assert!(p[1].1.is_empty());
        assert!(pair(&parse("p\n"), &parse("p\nq\n")).is_err());
        assert!(pair(&parse("a\tp\n"), &parse("b\tp\n")).is_err());
    }
}
