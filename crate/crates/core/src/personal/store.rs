//! On-disk layout: `<root>/<sha256(user)>/{model.arpa, vocab.txt, meta.json}`.
//! Only the hash of the user id and the model are kept; no message text.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{union_vocab, PersonalModel};
use crate::error::{Error, Result};
use crate::ngram::{parse_arpa, serialize_arpa};
use crate::vocab::Vocabulary;

pub fn user_hash(user_id: &str) -> String {
    hex::encode(Sha256::digest(user_id.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonalMeta {
    pub user_hash: String,
    pub trained_at: i64,
    pub order: usize,
    pub sentences: usize,
    pub active: bool,
}

/// Personal models by user, loaded lazily and swapped whole on retrain.
pub struct PersonalStore {
    root: PathBuf,
    cache: RwLock<HashMap<String, Arc<PersonalModel>>>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(tmp, path)?;
    Ok(())
}

impl PersonalStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        PersonalStore {
            root: root.into(),
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn user_dir(&self, user_id: &str) -> PathBuf {
        self.root.join(user_hash(user_id))
    }

    /// Writes the model files, then replaces any cached copy.
    pub fn save(&self, model: PersonalModel) -> Result<Arc<PersonalModel>> {
        let dir = self.user_dir(&model.user_id);
        fs::create_dir_all(&dir)?;
        let mut vocab = Vec::new();
        model.personal_vocab.write(&mut vocab)?;
        write_atomic(&dir.join("vocab.txt"), &vocab)?;
        let arpa = dir.join("model.arpa");
        match &model.automaton {
            Some(aut) => write_atomic(&arpa, serialize_arpa(aut).as_bytes())?,
            None => {
                if arpa.exists() {
                    fs::remove_file(&arpa)?;
                }
            }
        }
        let meta = PersonalMeta {
            user_hash: user_hash(&model.user_id),
            trained_at: model.trained_at,
            order: model.order,
            sentences: model.sentences,
            active: model.is_active(),
        };
        write_atomic(&dir.join("meta.json"), &serde_json::to_vec_pretty(&meta)?)?;
        let model = Arc::new(model);
        self.cache
            .write()
            .unwrap()
            .insert(model.user_id.clone(), model.clone());
        Ok(model)
    }

    /// Serves `model` from memory without writing it.
    pub fn insert(&self, model: PersonalModel) -> Arc<PersonalModel> {
        let model = Arc::new(model);
        self.cache
            .write()
            .unwrap()
            .insert(model.user_id.clone(), model.clone());
        model
    }

    /// The user's model, or `None` if nothing was ever trained for them.
    pub fn get(&self, user_id: &str, global: &Vocabulary) -> Result<Option<Arc<PersonalModel>>> {
        if let Some(m) = self.cache.read().unwrap().get(user_id) {
            return Ok(Some(m.clone()));
        }
        let dir = self.user_dir(user_id);
        if !dir.join("meta.json").exists() {
            return Ok(None);
        }
        let meta: PersonalMeta = serde_json::from_slice(&fs::read(dir.join("meta.json"))?)?;
        let personal_vocab = Vocabulary::load(dir.join("vocab.txt"))?;
        let union = union_vocab(global, &personal_vocab)?;
        let automaton = if meta.active {
            let aut = parse_arpa(&fs::read_to_string(dir.join("model.arpa"))?)?;
            if aut.symbols() != union.tokens() {
                return Err(Error::invalid(format!(
                    "personal model for {} does not match the global vocabulary",
                    meta.user_hash
                )));
            }
            Some(aut)
        } else {
            None
        };
        let model = Arc::new(PersonalModel {
            user_id: user_id.to_string(),
            automaton,
            personal_vocab,
            union_vocab: union,
            trained_at: meta.trained_at,
            order: meta.order,
            sentences: meta.sentences,
            report: None,
        });
        self.cache
            .write()
            .unwrap()
            .insert(user_id.to_string(), model.clone());
        Ok(Some(model))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CleanMessage;
    use crate::personal::{train_personal, PersonalOptions};
    use crate::vocab::VocabKind;

    #[test]
    fn save_then_load() {
        let global = Vocabulary::new(VocabKind::Word, ["will", "this", "work", "for", "?"]).unwrap();
        let msgs: Vec<CleanMessage> = (0..60)
            .map(|_| CleanMessage {
                subject: vec![],
                previous_body: vec![],
                body: vec!["will this work for smartcompose ?".split(' ').map(String::from).collect()],
                timestamp: 0,
                locale: "en-US".into(),
                language: "en".into(),
                utc_offset_minutes: None,
            })
            .collect();
        let m = train_personal("alice@example.com", &msgs, &global, &PersonalOptions::default(), 42).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let store = PersonalStore::new(dir.path());
        store.save(m.clone()).unwrap();

        let user_dir = store.user_dir("alice@example.com");
        assert!(user_dir.ends_with(user_hash("alice@example.com")));
        for f in ["model.arpa", "vocab.txt", "meta.json"] {
            assert!(user_dir.join(f).exists());
        }
        let all: String = ["model.arpa", "vocab.txt", "meta.json"]
            .iter()
            .map(|f| fs::read_to_string(user_dir.join(f)).unwrap())
            .collect();
        assert!(!all.contains("alice"));

        let fresh = PersonalStore::new(dir.path());
        let loaded = fresh.get("alice@example.com", &global).unwrap().unwrap();
        assert_eq!(loaded.trained_at, 42);
        assert_eq!(
            serialize_arpa(loaded.automaton.as_ref().unwrap()),
            serialize_arpa(m.automaton.as_ref().unwrap())
        );
        assert!(fresh.get("bob", &global).unwrap().is_none());
    }
}
