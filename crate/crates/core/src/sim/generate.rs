//! Seeded synthetic catalogue generator for fixtures, demos and tests.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::BibRecord;

const WORDS: &[&str] = &[
    "information", "retrieval", "system", "digital", "library", "database", "management",
    "computer", "network", "design", "analysis", "theory", "data", "science", "history",
    "introduction", "engineering", "software", "modern", "applications", "language", "learning",
    "economic", "development", "social", "policy", "research", "methods", "education", "health",
    "business", "models", "structures", "algorithms", "programming", "distributed", "parallel",
    "processing", "architecture", "security", "mathematics", "statistics", "physics", "chemistry",
    "biology", "medicine", "law", "politics", "culture", "art", "music", "literature", "poetry",
    "philosophy", "ethics", "religion", "asia", "europe", "singapore", "china", "america",
    "environment", "energy", "water", "urban", "planning", "transport", "finance", "accounting",
    "marketing", "organization", "behaviour", "psychology", "cognitive", "neural", "intelligence",
    "knowledge", "logic", "semantics", "graphics", "vision", "signal", "control", "circuits",
    "electronics", "materials", "mechanics", "thermodynamics", "fluid", "structural", "civil",
    "marine", "aerospace", "agriculture", "food", "nutrition", "population", "family", "children",
    "women", "labour", "industry", "trade", "global", "regional", "international", "national",
    "public", "private", "community", "media", "communication", "journalism", "film", "theatre",
    "building", "construction", "geography", "geology", "climate", "ocean",
    "ecology", "evolution", "genetics", "molecular", "cell", "clinical", "nursing", "pharmacy",
    "optimization", "simulation", "numerical", "calculus", "algebra", "geometry", "probability",
    "queueing", "performance", "evaluation", "reliability", "quality", "standards", "protocols",
    "internet", "web", "multimedia", "interface", "human", "interaction", "documents", "catalog",
    "indexing", "classification", "archives", "records", "preservation", "metadata", "query",
    "routing", "search", "engines", "text", "mining", "warehouse", "transactions", "recovery",
    "concurrency", "storage", "memory", "compilers", "operating", "kernel", "microprocessor",
    "robotics", "automation", "manufacturing", "production", "supply", "chain", "logistics",
    "tourism", "heritage", "war", "revolution", "empire", "colonial", "ancient", "medieval",
    "renaissance", "twentieth", "century", "handbook", "guide", "principles", "foundations",
    "advanced", "topics", "essays", "proceedings", "conference", "workshop", "survey", "review",
];

const SURNAMES: &[&str] = &[
    "Smith", "Tan", "Lim", "Ng", "Lee", "Wong", "Chen", "Garcia", "Brown", "Jones", "Miller",
    "Davis", "Wilson", "Taylor", "Clark", "Lewis", "Walker", "Hall", "Young", "King", "Wright",
    "Lopez", "Hill", "Scott", "Green", "Adams", "Baker", "Nelson", "Carter", "Mitchell", "Perez",
    "Roberts", "Turner", "Phillips", "Campbell", "Parker", "Evans", "Edwards", "Collins", "Stewart",
    "Sanchez", "Morris", "Rogers", "Reed", "Cook", "Morgan", "Bell", "Murphy", "Bailey", "Rivera",
    "Cooper", "Richardson", "Cox", "Howard", "Ward", "Torres", "Peterson", "Gray", "Ramirez",
    "James", "Watson", "Brooks", "Kelly", "Sanders", "Price", "Bennett", "Wood", "Barnes", "Ross",
];

#[derive(Debug, Clone)]
pub struct CorpusSpec {
    pub records: usize,
    pub seed: u64,
    /// Prefix for system ids; `None` leaves ids unset.
    pub id_prefix: Option<String>,
    pub with_isbn: bool,
    /// Vocabulary skew: word `k` (0-based) is drawn with weight `1/(k+1)^s`.
    pub zipf_exponent: f64,
    /// Restrict the vocabulary to its first `n` words (0 = all).
    pub vocabulary: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            records: 100,
            seed: 0,
            id_prefix: Some("R".into()),
            with_isbn: false,
            zipf_exponent: 0.8,
            vocabulary: 0,
        }
    }
}

pub fn vocabulary() -> &'static [&'static str] {
    WORDS
}

/// Generates a deterministic catalogue for `spec`.
pub fn generate_corpus(spec: &CorpusSpec) -> Vec<BibRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let vocab = match spec.vocabulary {
        0 => WORDS,
        n => &WORDS[..n.min(WORDS.len())],
    };
    let weights: Vec<f64> = (0..vocab.len())
        .map(|k| 1.0 / ((k + 1) as f64).powf(spec.zipf_exponent))
        .collect();
    let words = WeightedIndex::new(&weights).expect("non-empty vocabulary");
    let phrase = |rng: &mut ChaCha8Rng, lo: usize, hi: usize| -> String {
        let n = rng.gen_range(lo..=hi);
        let mut out: Vec<&str> = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(vocab[words.sample(rng)]);
        }
        out.join(" ")
    };

    (0..spec.records)
        .map(|i| {
            let mut title = phrase(&mut rng, 2, 6);
            if let Some(first) = title.get_mut(0..1) {
                first.make_ascii_uppercase();
            }
            let mut r = BibRecord::new(title).expect("generated titles are non-empty");
            for _ in 0..rng.gen_range(1..=3) {
                let surname = SURNAMES[rng.gen_range(0..SURNAMES.len())];
                let initial = (b'A' + rng.gen_range(0..26u8)) as char;
                r = r.with_author(format!("{surname}, {initial}."));
            }
            for _ in 0..rng.gen_range(0..=3) {
                r = r.with_subject(phrase(&mut rng, 1, 3));
            }
            if let Some(prefix) = &spec.id_prefix {
                r = r.with_id(format!("{prefix}{:06}", i + 1));
            }
            if spec.with_isbn {
                r = r.with_isbn(format!("{:010}", 1_000_000_000u64 + (spec.seed % 1000) * 1_000_000 + i as u64));
            }
            r
        })
        .collect()
}
