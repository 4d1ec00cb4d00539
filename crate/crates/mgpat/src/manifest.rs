//! Corpus manifests: one whitespace-separated record per line,
//!
//! ```text
//! <id> document <path>
//! <id> query <path> [<doc_id>,<doc_id>,...]
//! ```
//!
//! Paths are relative to the manifest's directory. A path ending in `.feat`
//! names a ready feature file; anything else is read as WAV audio.
//! `#` starts a comment.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mgpat_core::eval::Judgments;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Role {
    Document,
    Query,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Document => "document",
            Role::Query => "query",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub role: Role,
    pub path: PathBuf,
}

impl Utterance {
    pub fn is_feature_file(&self) -> bool {
        self.path.extension().is_some_and(|e| e == "feat")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorpusManifest {
    pub documents: Vec<Utterance>,
    pub queries: Vec<Utterance>,
    pub judgments: Judgments,
}

impl CorpusManifest {
    pub fn parse(text: &str, base: &Path, origin: &Path) -> Result<Self> {
        let mut m = CorpusManifest::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |what: String| Error::file(origin, format!("line {}: {what}", i + 1));
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() < 3 || f.len() > 4 {
                return Err(bad("expected `id role path [judgments]`".into()));
            }
            let role = match f[1] {
                "document" => Role::Document,
                "query" => Role::Query,
                other => return Err(bad(format!("unknown role {other:?}"))),
            };
            let u = Utterance {
                id: f[0].to_string(),
                role,
                path: base.join(f[2]),
            };
            match role {
                Role::Document => {
                    if f.len() == 4 {
                        return Err(bad("judgments are only allowed on query records".into()));
                    }
                    m.documents.push(u);
                }
                Role::Query => {
                    if let Some(j) = f.get(3) {
                        let docs: BTreeSet<String> = j.split(',').filter(|s| !s.is_empty()).map(String::from).collect();
                        m.judgments.insert(u.id.clone(), docs);
                    }
                    m.queries.push(u);
                }
            }
        }
        m.validate().map_err(|e| Error::file(origin, e))?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")), path)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for u in self.documents.iter().chain(&self.queries) {
            if !seen.insert(u.id.as_str()) {
                return Err(Error::Data(format!("duplicate utterance id {}", u.id)));
            }
        }
        let docs: BTreeSet<&str> = self.documents.iter().map(|u| u.id.as_str()).collect();
        for (q, judged) in &self.judgments {
            if let Some(d) = judged.iter().find(|d| !docs.contains(d.as_str())) {
                return Err(Error::Data(format!("query {q} judges unknown document {d}")));
            }
        }
        if self.documents.is_empty() {
            return Err(Error::Data("manifest lists no documents".into()));
        }
        Ok(())
    }

    pub fn all(&self) -> impl Iterator<Item = &Utterance> {
        self.documents.iter().chain(&self.queries)
    }

    /// Serializes with paths relative to `base` where possible.
    pub fn to_text(&self, base: &Path) -> String {
        let mut s = String::from("# id role path [relevant documents]\n");
        for u in self.all() {
            let p = u.path.strip_prefix(base).unwrap_or(&u.path);
            let _ = write!(s, "{} {} {}", u.id, u.role.as_str(), p.display());
            if let Some(j) = self.judgments.get(&u.id) {
                let list: Vec<&str> = j.iter().map(String::as_str).collect();
                let _ = write!(s, " {}", list.join(","));
            }
            s.push('\n');
        }
        s
    }

    pub fn ids(&self, role: Role) -> Vec<String> {
        let list = match role {
            Role::Document => &self.documents,
            Role::Query => &self.queries,
        };
        list.iter().map(|u| u.id.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_validate() {
        let text = "# c\nd1 document a.wav\nd2 document b.feat\nq1 query q.wav d1,d2\nq2 query r.wav\n";
        let m = CorpusManifest::parse(text, Path::new("/x"), Path::new("m")).unwrap();
        assert_eq!(m.documents.len(), 2);
        assert_eq!(m.documents[0].path, PathBuf::from("/x/a.wav"));
        assert!(m.documents[1].is_feature_file());
        assert_eq!(m.judgments["q1"].len(), 2);
        assert!(!m.judgments.contains_key("q2"));
        let again = CorpusManifest::parse(&m.to_text(Path::new("/x")), Path::new("/x"), Path::new("m")).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn rejects_bad_records() {
        let p = |t: &str| CorpusManifest::parse(t, Path::new("."), Path::new("m"));
        assert!(p("d1 document a.wav\nd1 query b.wav\n").is_err());
        assert!(p("d1 document a.wav\nq1 query b.wav d9\n").is_err());
        assert!(p("d1 speaker a.wav\n").is_err());
        assert!(p("q1 query b.wav\n").is_err());
    }
}
