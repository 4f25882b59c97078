//! Tab-separated news and behavior logs.
//!
//! `news.tsv`: `news_id<TAB>category<TAB>token token ...`
//!
//! `behaviors.tsv`: `impression_id<TAB>user_id<TAB>attribute<TAB>history<TAB>items`,
//! where `history` is space separated news ids and `items` is space
//! separated `news_id-label` pairs with binary labels. Line order is time
//! order.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Impression, NewsItem, SynthConfig, UserRecord, UNK_TOKEN};
use crate::error::{Error, Result};

/// Contents of `meta.json` next to a serialized synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub synth: SynthConfig,
    pub seed: u64,
}

pub fn write_dataset(dir: &Path, dataset: &Dataset, meta: Option<&DatasetMeta>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut news = String::new();
    for n in &dataset.news {
        let tokens: Vec<&str> = n.title_tokens.iter().map(|t| dataset.vocab[*t].as_str()).collect();
        writeln!(
            news,
            "{}\t{}\t{}",
            n.news_id,
            dataset.categories[n.category_id],
            tokens.join(" ")
        )
        .unwrap();
    }

    let mut rows: Vec<(usize, String)> = Vec::new();
    for u in &dataset.users {
        let history: Vec<&str> = u.history.iter().map(|i| dataset.news[*i].news_id.as_str()).collect();
        let history = history.join(" ");
        for imp in &u.impressions {
            let items: Vec<String> = imp
                .items
                .iter()
                .map(|(i, l)| format!("{}-{}", dataset.news[*i].news_id, u8::from(*l)))
                .collect();
            rows.push((
                imp.ordinal,
                format!(
                    "{}\t{}\t{}\t{}\t{}\n",
                    imp.impression_id,
                    u.user_id,
                    u.attribute,
                    history,
                    items.join(" ")
                ),
            ));
        }
    }
    rows.sort_by_key(|(o, _)| *o);
    let behaviors: String = rows.into_iter().map(|(_, r)| r).collect();

    let write = |name: &str, body: &str| {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(path, e))
    };
    write("news.tsv", &news)?;
    write("behaviors.tsv", &behaviors)?;
    if let Some(meta) = meta {
        write("meta.json", &(serde_json::to_string_pretty(meta)? + "\n"))?;
    }
    Ok(())
}

pub fn load_dataset(news_path: &Path, behaviors_path: &Path) -> Result<Dataset> {
    load_dataset_with_vocab(news_path, behaviors_path, None)
}

/// Loads a dataset. With `vocab` given, token ids follow that vocabulary and
/// unknown tokens map to [`UNK_TOKEN`]; otherwise ids are assigned in
/// first-seen order after the reserved entries.
pub fn load_dataset_with_vocab(
    news_path: &Path,
    behaviors_path: &Path,
    vocab: Option<&[String]>,
) -> Result<Dataset> {
    let news_text = fs::read_to_string(news_path).map_err(|e| Error::io(news_path, e))?;
    let behaviors_text =
        fs::read_to_string(behaviors_path).map_err(|e| Error::io(behaviors_path, e))?;

    let (mut token_ids, mut vocab_list, fixed) = match vocab {
        Some(v) => (
            v.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect::<HashMap<_, _>>(),
            v.to_vec(),
            true,
        ),
        None => {
            let base = vec!["<pad>".to_string(), "<unk>".to_string()];
            (
                base.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect(),
                base,
                false,
            )
        }
    };

    let mut categories: Vec<String> = Vec::new();
    let mut category_ids: HashMap<String, usize> = HashMap::new();
    let mut news = Vec::new();
    let mut news_ids: HashMap<String, usize> = HashMap::new();

    for (lineno, line) in news_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_fields(line);
        let parse_err = |column: usize, message: String| Error::Parse {
            file: news_path.to_path_buf(),
            line: lineno + 1,
            column,
            message,
        };
        if fields.len() != 3 {
            return Err(parse_err(
                1,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let (col_id, id) = fields[0];
        if id.is_empty() {
            return Err(parse_err(col_id, "empty news id".into()));
        }
        if news_ids.contains_key(id) {
            return Err(parse_err(col_id, format!("duplicate news id {id}")));
        }
        let (col_cat, cat) = fields[1];
        if cat.is_empty() {
            return Err(parse_err(col_cat, "empty category".into()));
        }
        let next_cat = categories.len();
        let category_id = *category_ids.entry(cat.to_string()).or_insert_with(|| {
            categories.push(cat.to_string());
            next_cat
        });
        let title_tokens = fields[2]
            .1
            .split_whitespace()
            .map(|tok| match token_ids.get(tok) {
                Some(i) => *i,
                None if fixed => UNK_TOKEN,
                None => {
                    let i = vocab_list.len();
                    vocab_list.push(tok.to_string());
                    token_ids.insert(tok.to_string(), i);
                    i
                }
            })
            .collect();
        news_ids.insert(id.to_string(), news.len());
        news.push(NewsItem {
            news_id: id.to_string(),
            category_id,
            title_tokens,
        });
    }

    let mut users: Vec<UserRecord> = Vec::new();
    let mut user_index: HashMap<String, usize> = HashMap::new();
    let mut max_attribute = 0;
    for (lineno, line) in behaviors_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_fields(line);
        let parse_err = |column: usize, message: String| Error::Parse {
            file: behaviors_path.to_path_buf(),
            line: lineno + 1,
            column,
            message,
        };
        if fields.len() != 5 {
            return Err(parse_err(
                1,
                format!("expected 5 tab-separated fields, found {}", fields.len()),
            ));
        }
        let resolve = |col: usize, id: &str| {
            news_ids.get(id).copied().ok_or_else(|| {
                Error::Data(format!(
                    "{}:{}:{col}: news id {id} is not in the catalog",
                    behaviors_path.display(),
                    lineno + 1
                ))
            })
        };
        let (col_attr, attr) = fields[2];
        let attribute: usize = attr
            .parse()
            .map_err(|_| parse_err(col_attr, format!("attribute {attr:?} is not a class index")))?;
        max_attribute = max_attribute.max(attribute);
        let (col_hist, hist) = fields[3];
        let history = hist
            .split_whitespace()
            .map(|id| resolve(col_hist, id))
            .collect::<Result<Vec<_>>>()?;
        let (col_items, items_field) = fields[4];
        let mut items = Vec::new();
        for pair in items_field.split_whitespace() {
            let (id, label) = pair
                .rsplit_once('-')
                .ok_or_else(|| parse_err(col_items, format!("item {pair:?} lacks a -label suffix")))?;
            let label = match label {
                "0" => false,
                "1" => true,
                other => {
                    return Err(parse_err(col_items, format!("label {other:?} is not 0 or 1")));
                }
            };
            items.push((resolve(col_items, id)?, label));
        }
        if items.is_empty() {
            return Err(parse_err(col_items, "impression has no items".into()));
        }

        let user_id = fields[1].1;
        let idx = *user_index.entry(user_id.to_string()).or_insert_with(|| {
            users.push(UserRecord {
                user_id: user_id.to_string(),
                attribute,
                history: history.clone(),
                impressions: Vec::new(),
            });
            users.len() - 1
        });
        let user = &mut users[idx];
        if user.attribute != attribute || user.history != history {
            return Err(parse_err(
                col_attr,
                format!("user {user_id} has a different attribute or history than on an earlier line"),
            ));
        }
        user.impressions.push(Impression {
            impression_id: fields[0].1.to_string(),
            ordinal: lineno,
            items,
            split: None,
        });
    }

    // Ordinals are line numbers; renumber densely so they match the
    // generator's ordering.
    let mut all: Vec<(usize, usize, usize)> = Vec::new();
    for (u, user) in users.iter().enumerate() {
        for (k, imp) in user.impressions.iter().enumerate() {
            all.push((imp.ordinal, u, k));
        }
    }
    all.sort_unstable();
    for (dense, (_, u, k)) in all.into_iter().enumerate() {
        users[u].impressions[k].ordinal = dense;
    }

    let dataset = Dataset {
        news,
        users,
        vocab: vocab_list,
        categories,
        num_attribute_classes: (max_attribute + 1).max(2),
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Splits on tabs, pairing each field with its 1-based starting column.
fn split_fields(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut col = 1;
    for f in line.split('\t') {
        out.push((col, f));
        col += f.chars().count() + 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthConfig};

    fn write_files(dir: &Path, news: &str, behaviors: &str) -> (std::path::PathBuf, std::path::PathBuf) {
        let n = dir.join("news.tsv");
        let b = dir.join("behaviors.tsv");
        fs::write(&n, news).unwrap();
        fs::write(&b, behaviors).unwrap();
        (n, b)
    }

    fn tempdir(name: &str) -> std::path::PathBuf {
        let d = std::env::temp_dir().join(format!("fairrank-tsv-{name}-{}", std::process::id()));
        fs::create_dir_all(&d).unwrap();
        d
    }

    #[test]
    fn empty_behaviors_is_no_users() {
        let d = tempdir("empty");
        let (n, b) = write_files(&d, "N1\tsports\ta b\n", "");
        let err = load_dataset(&n, &b).unwrap_err().to_string();
        assert!(err.contains("no users"), "{err}");
    }

    #[test]
    fn tiny_fixture_loads() {
        let d = tempdir("tiny");
        let (n, b) = write_files(
            &d,
            "N1\tsports\tgoal match\nN2\tpolitics\tvote goal\n",
            "I0\tU1\t1\tN1\tN1-0 N2-1\n",
        );
        let ds = load_dataset(&n, &b).unwrap();
        assert_eq!(ds.news.len(), 2);
        assert_eq!(ds.users.len(), 1);
        assert_eq!(ds.users[0].attribute, 1);
        assert_eq!(ds.users[0].impressions[0].items, vec![(0, false), (1, true)]);
        assert_eq!(ds.vocab, ["<pad>", "<unk>", "goal", "match", "vote"]);
        assert_eq!(ds.news[1].title_tokens, vec![4, 2]);
    }

    #[test]
    fn malformed_line_reports_position() {
        let d = tempdir("malformed");
        let (n, b) = write_files(
            &d,
            "N1\tsports\tgoal\n",
            "I0\tU1\t0\tN1\tN1-0\nI1\tU1\t0\tN1\tN1-7\n",
        );
        match load_dataset(&n, &b).unwrap_err() {
            Error::Parse { line, column, .. } => {
                assert_eq!(line, 2);
                assert_eq!(column, 12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dangling_reference_is_rejected() {
        let d = tempdir("dangling");
        let (n, b) = write_files(&d, "N1\tsports\tgoal\n", "I0\tU1\t0\tN9\tN1-1\n");
        let err = load_dataset(&n, &b).unwrap_err();
        assert!(matches!(err, Error::Data(_)), "{err:?}");
        assert!(err.to_string().contains("N9"));
    }

    #[test]
    fn fixed_vocab_maps_unknown_tokens() {
        let d = tempdir("unk");
        let (n, b) = write_files(&d, "N1\tsports\tgoal offside\n", "I0\tU1\t0\t\tN1-1\n");
        let vocab = vec!["<pad>".to_string(), "<unk>".to_string(), "goal".to_string()];
        let ds = load_dataset_with_vocab(&n, &b, Some(&vocab)).unwrap();
        assert_eq!(ds.news[0].title_tokens, vec![2, UNK_TOKEN]);
        assert_eq!(ds.users[0].history, Vec::<usize>::new());
    }

    #[test]
    fn synthetic_round_trip() {
        let cfg = SynthConfig {
            num_users: 30,
            num_news: 300,
            ..SynthConfig::default()
        };
        let ds = generate_synthetic(&cfg).unwrap();
        let d = tempdir("roundtrip");
        write_dataset(&d, &ds, Some(&DatasetMeta { synth: cfg.clone(), seed: cfg.seed })).unwrap();
        let back = load_dataset(&d.join("news.tsv"), &d.join("behaviors.tsv")).unwrap();
        assert_eq!(back, ds);
        let meta: DatasetMeta =
            serde_json::from_str(&fs::read_to_string(d.join("meta.json")).unwrap()).unwrap();
        assert_eq!(meta.synth, cfg);
    }
}
