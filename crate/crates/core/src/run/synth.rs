//! Seeded toy biographies with a matching knowledge graph.
//!
//! Each document is about one invented person (its title) living in one of
//! a few themed settings. Sentences sit in a fixed life order, name the
//! person in full and carry a word of the document's theme; fact sentences
//! state one triple of the graph. Adjacency and order follow from sentence
//! kinds, documents differ by name and usually by theme.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datapipe::{Annotation, RawRecord, SpanKind};
use crate::error::Result;
use crate::tasks::TripleRecord;

const SYLLABLES: [&str; 24] = [
    "ka", "lo", "mi", "ren", "sa", "tor", "vel", "dun", "ira", "bel", "cor", "fen", "gal", "hal", "jor", "mar", "nel",
    "pim", "quin", "ros", "tam", "ul", "ves", "zor",
];
const PLACES: [&str; 12] =
    ["Amberfield", "Brightwater", "Coldharbor", "Dunmere", "Eastmarch", "Fallowby", "Greywick", "Highmoor", "Ironvale", "Juniper Bay", "Kestrel Point", "Lowford"];
const ORGS: [&str; 10] = [
    "Orvane Works",
    "Tallis Foundry",
    "Meridian Press",
    "Sable Institute",
    "Corvid Shipping",
    "Halden Bank",
    "Pellar Mills",
    "Quarry Guild",
    "Rowan Hospital",
    "Stellan Observatory",
];
const FIELDS: [&str; 8] = ["astronomy", "botany", "geology", "medicine", "music", "law", "chemistry", "history"];

/// Setting words; every sentence of a document uses its theme's words.
const THEMES: [[&str; 4]; 8] = [
    ["harbor", "ships", "sailors", "waves"],
    ["mountains", "snow", "climbers", "glaciers"],
    ["forest", "pines", "hunters", "deer"],
    ["city", "markets", "merchants", "towers"],
    ["desert", "dunes", "camels", "caravans"],
    ["farm", "fields", "horses", "barns"],
    ["river", "boats", "fishermen", "bridges"],
    ["garden", "roses", "bees", "orchards"],
];

/// Relation names in the order they appear in every document.
pub const RELATIONS: [&str; 5] = ["born in", "studied", "worked for", "founded", "lives in"];

/// A corpus and the triples its sentences express.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub records: Vec<RawRecord>,
    pub triples: Vec<TripleRecord>,
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}

fn name_part<R: Rng>(rng: &mut R) -> String {
    let n = rng.gen_range(2..=3);
    capitalize(&(0..n).map(|_| *SYLLABLES.choose(rng).expect("non-empty")).collect::<String>())
}

fn pick<'a, R: Rng>(xs: &[&'a str], rng: &mut R) -> &'a str {
    xs.choose(rng).expect("non-empty")
}

struct Fact {
    relation: &'static str,
    tail: String,
    phrase: &'static str,
}

/// Sentences in life order and the facts they state.
fn life<R: Rng>(person: &str, rng: &mut R) -> (Vec<String>, Vec<Fact>) {
    let theme = THEMES.choose(rng).expect("non-empty");
    let w = |rng: &mut R| pick(theme, rng).to_string();
    let born = pick(&PLACES, rng);
    let field = pick(&FIELDS, rng);
    let employer = pick(&ORGS, rng);
    let founded = pick(&ORGS, rng);
    let home = pick(&PLACES, rng);
    let year = rng.gen_range(1800..1900);
    let sentences = vec![
        format!("{person} was born in {born} in the year {year} among the {} and {}.", w(rng), w(rng)),
        format!("As a child {person} spent every summer watching the {} and the {}.", w(rng), w(rng)),
        format!("At the academy {person} studied {field} and wrote essays about {} and {}.", w(rng), w(rng)),
        format!("After the academy {person} worked for {employer} near the {} and {}.", w(rng), w(rng)),
        format!("Later in life {person} founded {founded} with friends from the {} and {}.", w(rng), w(rng)),
        format!("Today {person} lives in {home} in a small house facing the {} and {}.", w(rng), w(rng)),
        format!("Old neighbours say that {person} still dreams about {} and {} every night.", w(rng), w(rng)),
    ];
    let facts = vec![
        Fact { relation: RELATIONS[0], tail: born.into(), phrase: "was born in" },
        Fact { relation: RELATIONS[1], tail: field.into(), phrase: "studied" },
        Fact { relation: RELATIONS[2], tail: employer.into(), phrase: "worked for" },
        Fact { relation: RELATIONS[3], tail: founded.into(), phrase: "founded" },
        Fact { relation: RELATIONS[4], tail: home.into(), phrase: "lives in" },
    ];
    (sentences, facts)
}

/// `n_docs` documents of two paragraphs (4 and 3 sentences), about 100
/// tokens each under a word-level vocabulary.
pub fn generate(seed: u64, n_docs: usize, dataset: &str) -> SynthCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n_docs);
    let mut triples = Vec::new();
    let mut used = std::collections::HashSet::new();
    for d in 0..n_docs {
        let person = loop {
            let p = format!("{} {}", name_part(&mut rng), name_part(&mut rng));
            if used.insert(p.clone()) {
                break p;
            }
        };
        let (sentences, facts) = life(&person, &mut rng);
        let text = format!("{}\n{}", sentences[..4].join(" "), sentences[4..].join(" "));
        let mut annotations = vec![Annotation { text: person.clone(), kind: SpanKind::Entity }];
        for f in &facts {
            triples.push(TripleRecord { head: person.clone(), relation: f.relation.into(), tail: f.tail.clone() });
            annotations.push(Annotation { text: f.tail.clone(), kind: SpanKind::Entity });
            annotations.push(Annotation { text: f.phrase.into(), kind: SpanKind::Phrase });
        }
        annotations.sort_by(|a, b| a.text.cmp(&b.text));
        annotations.dedup();
        records.push(RawRecord { dataset: dataset.into(), doc_id: format!("{dataset}-{d:04}"), title: Some(person), text, annotations });
    }
    SynthCorpus { records, triples }
}

impl SynthCorpus {
    /// Writes `corpus.jsonl` and `knowledge.jsonl` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut c = std::io::BufWriter::new(std::fs::File::create(dir.join("corpus.jsonl"))?);
        for r in &self.records {
            writeln!(c, "{}", serde_json::to_string(r)?)?;
        }
        c.flush()?;
        let mut k = std::io::BufWriter::new(std::fs::File::create(dir.join("knowledge.jsonl"))?);
        for t in &self.triples {
            writeln!(k, "{}", serde_json::to_string(t)?)?;
        }
        k.flush()?;
        Ok(())
    }
}
