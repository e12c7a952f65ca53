//! Synthetic biography infoboxes with template-rendered descriptions.
//!
//! The description is a deterministic function of the infobox: fields are
//! shuffled inside the infobox but always verbalized in template order, so a
//! model has to find each field rather than read them left to right.
//! Distractor fields carry tokens that never occur in any description.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Domain, Example, Field, Infobox};

const MONTHS: [&str; 12] = [
    "january",
    "february",
    "march",
    "april",
    "may",
    "june",
    "july",
    "august",
    "september",
    "october",
    "november",
    "december",
];

const NATIONALITIES: [&str; 30] = [
    "indian",
    "american",
    "english",
    "french",
    "german",
    "italian",
    "spanish",
    "australian",
    "canadian",
    "brazilian",
    "argentine",
    "dutch",
    "swedish",
    "norwegian",
    "danish",
    "polish",
    "russian",
    "japanese",
    "chinese",
    "korean",
    "mexican",
    "irish",
    "scottish",
    "welsh",
    "belgian",
    "austrian",
    "swiss",
    "greek",
    "turkish",
    "egyptian",
];

const SPORTS_JOBS: [&str; 20] = [
    "footballer",
    "cricketer",
    "swimmer",
    "sprinter",
    "boxer",
    "cyclist",
    "goalkeeper",
    "striker",
    "defender",
    "midfielder",
    "batsman",
    "bowler",
    "wrestler",
    "golfer",
    "jockey",
    "rower",
    "fencer",
    "archer",
    "sailor",
    "skier",
];

const ARTS_JOBS: [&str; 20] = [
    "actor",
    "director",
    "painter",
    "singer",
    "songwriter",
    "poet",
    "novelist",
    "sculptor",
    "dancer",
    "composer",
    "pianist",
    "violinist",
    "photographer",
    "playwright",
    "screenwriter",
    "architect",
    "producer",
    "comedian",
    "illustrator",
    "guitarist",
];

const TEAMS: [&str; 30] = [
    "arsenal",
    "chelsea",
    "everton",
    "fulham",
    "leeds",
    "millwall",
    "porto",
    "benfica",
    "ajax",
    "celtic",
    "rangers",
    "lazio",
    "napoli",
    "torino",
    "sevilla",
    "valencia",
    "lyon",
    "monaco",
    "nantes",
    "lille",
    "bayern",
    "hertha",
    "hamburg",
    "bremen",
    "feyenoord",
    "anderlecht",
    "basel",
    "galatasaray",
    "olympiacos",
    "zenit",
];

const GENRES: [&str; 20] = [
    "jazz",
    "opera",
    "cinema",
    "theatre",
    "portraiture",
    "sculpture",
    "ballet",
    "poetry",
    "folk",
    "blues",
    "modernism",
    "realism",
    "impressionism",
    "documentary",
    "comedy",
    "drama",
    "animation",
    "photography",
    "architecture",
    "literature",
];

/// Distractor fields: never mentioned in descriptions.
const DISTRACTORS: [(&str, [&str; 15]); 6] = [
    (
        "religion",
        [
            "hindu",
            "catholic",
            "protestant",
            "buddhist",
            "muslim",
            "jewish",
            "agnostic",
            "orthodox",
            "anglican",
            "sikh",
            "lutheran",
            "methodist",
            "baptist",
            "jain",
            "quaker",
        ],
    ),
    (
        "residence",
        [
            "london", "paris", "berlin", "madrid", "rome", "vienna", "lisbon", "dublin", "oslo",
            "prague", "warsaw", "athens", "cairo", "tokyo", "sydney",
        ],
    ),
    (
        "alma_mater",
        [
            "oxford",
            "cambridge",
            "harvard",
            "yale",
            "princeton",
            "stanford",
            "sorbonne",
            "heidelberg",
            "bologna",
            "leiden",
            "uppsala",
            "edinburgh",
            "columbia",
            "cornell",
            "caltech",
        ],
    ),
    (
        "height",
        [
            "1.62", "1.65", "1.68", "1.70", "1.72", "1.74", "1.76", "1.78", "1.80", "1.82", "1.84",
            "1.86", "1.88", "1.90", "1.93",
        ],
    ),
    (
        "awards",
        [
            "oscar",
            "grammy",
            "bafta",
            "emmy",
            "tony",
            "pulitzer",
            "booker",
            "ballon",
            "laureus",
            "padma",
            "knighthood",
            "cesar",
            "goya",
            "juno",
            "polar",
        ],
    ),
    (
        "hobbies",
        [
            "chess",
            "fishing",
            "hiking",
            "gardening",
            "cooking",
            "knitting",
            "birdwatching",
            "surfing",
            "climbing",
            "pottery",
            "woodwork",
            "astronomy",
            "origami",
            "kayaking",
            "juggling",
        ],
    ),
];

/// Syllables for training-pool names.
const COMMON_SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ra", "ten", "vo", "sa", "di", "ne", "ru", "pa", "zel", "mo", "fi", "ga",
    "he",
];

/// Each of these contains a letter (b c j q w x y) absent from
/// `COMMON_SYLLABLES`, so held-out names can never equal a training name.
const HELDOUT_SYLLABLES: [&str; 12] = [
    "bu", "qe", "xo", "wy", "jo", "ce", "by", "qi", "xa", "wu", "ja", "cy",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainMix {
    Sports,
    Arts,
    Mixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NameStyle {
    /// Names built from the training syllable set.
    Common,
    /// Names guaranteed disjoint from every `Common` name.
    Heldout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub domain: DomainMix,
    /// Distractor fields per infobox, at most 6.
    pub distractor_fields: usize,
    pub max_occupations: usize,
    pub name_style: NameStyle,
    /// Shuffle field order inside each infobox.
    pub shuffle_fields: bool,
    /// Size of the birth-year range starting at 1940.
    pub year_span: usize,
    /// Draw name tokens from a fixed pool of this many tokens, shared by
    /// every seed, so that names recur and can enter the vocabulary.
    /// `None` makes every name token fresh. Ignored for `Heldout` names.
    pub name_pool: Option<usize>,
    /// With a pool, probability that a name token is fresh instead.
    pub rare_name_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            domain: DomainMix::Mixed,
            distractor_fields: 3,
            max_occupations: 3,
            name_style: NameStyle::Common,
            shuffle_fields: true,
            year_span: 50,
            name_pool: None,
            rare_name_rate: 0.0,
        }
    }
}

/// Every word a description can contain, names excluded.
pub fn description_pool() -> Vec<&'static str> {
    let mut words: Vec<&str> = vec![
        "(", ")", "born", "is", "a", "an", "who", "plays", "for", "known", ".", ",", "and",
    ];
    words.extend(MONTHS);
    words.extend(NATIONALITIES);
    words.extend(SPORTS_JOBS);
    words.extend(ARTS_JOBS);
    words.extend(TEAMS);
    words.extend(GENRES);
    words
}

/// Every value a distractor field can carry.
pub fn distractor_pool() -> Vec<&'static str> {
    DISTRACTORS
        .iter()
        .flat_map(|(_, vs)| vs.iter().copied())
        .collect()
}

fn make_name_token(rng: &mut ChaCha8Rng, style: NameStyle, syllables: usize) -> String {
    let set: &[&str] = match style {
        NameStyle::Common => &COMMON_SYLLABLES,
        NameStyle::Heldout => &HELDOUT_SYLLABLES,
    };
    (0..syllables)
        .map(|_| *set.choose(rng).expect("nonempty"))
        .collect()
}

/// `size` distinct common name tokens, independent of any example seed.
pub fn name_pool(size: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6e61_6d65);
    let mut seen = std::collections::HashSet::new();
    let mut pool = Vec::with_capacity(size);
    while pool.len() < size {
        let syllables = if pool.len() % 2 == 0 { 2 } else { 3 };
        let t = make_name_token(&mut rng, NameStyle::Common, syllables);
        if seen.insert(t.clone()) {
            pool.push(t);
        }
    }
    pool
}

fn pick_name_token(
    rng: &mut ChaCha8Rng,
    config: &SynthConfig,
    pool: &[String],
    syllables: usize,
) -> String {
    if config.name_style == NameStyle::Common
        && !pool.is_empty()
        && !rng.gen_bool(config.rare_name_rate.clamp(0.0, 1.0))
    {
        return pool.choose(rng).expect("nonempty").clone();
    }
    make_name_token(rng, config.name_style, syllables)
}

fn article(word: &str) -> &'static str {
    if word.starts_with(['a', 'e', 'i', 'o', 'u']) {
        "an"
    } else {
        "a"
    }
}

fn verbalize_list(items: &[String], out: &mut Vec<String>) {
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            if i + 1 == items.len() {
                out.push("and".into());
            } else {
                out.push(",".into());
            }
        }
        out.push(item.clone());
    }
}

/// Renders the description of a synthetic infobox.
pub fn render_description(infobox: &Infobox, domain: Domain) -> Vec<String> {
    let get = |name: &str| -> Vec<String> {
        infobox
            .field(name)
            .map(|f| f.values.clone())
            .unwrap_or_default()
    };
    let mut out = get("name");
    out.push("(".into());
    out.push("born".into());
    out.extend(get("birth_date"));
    out.push(")".into());
    out.push("is".into());
    let nationality = get("nationality");
    out.push(article(&nationality[0]).into());
    out.extend(nationality);
    verbalize_list(&get("occupation"), &mut out);
    match domain {
        Domain::Sports => {
            out.extend(["who", "plays", "for"].map(String::from));
            out.extend(get("team"));
        }
        Domain::Arts => {
            out.extend(["known", "for"].map(String::from));
            out.extend(get("genre"));
        }
    }
    out.push(".".into());
    out
}

fn generate_one(rng: &mut ChaCha8Rng, config: &SynthConfig, pool: &[String]) -> Example {
    let domain = match config.domain {
        DomainMix::Sports => Domain::Sports,
        DomainMix::Arts => Domain::Arts,
        DomainMix::Mixed => {
            if rng.gen_bool(0.5) {
                Domain::Sports
            } else {
                Domain::Arts
            }
        }
    };

    let mut name = vec![pick_name_token(rng, config, pool, 2)];
    if rng.gen_bool(0.3) {
        name.push(pick_name_token(rng, config, pool, 2));
    }
    name.push(pick_name_token(rng, config, pool, 3));

    let day = rng.gen_range(1..=28).to_string();
    let month = MONTHS.choose(rng).expect("nonempty").to_string();
    let year = (1940 + rng.gen_range(0..config.year_span.max(1))).to_string();
    let nationality = NATIONALITIES.choose(rng).expect("nonempty").to_string();

    let jobs: &[&str] = match domain {
        Domain::Sports => &SPORTS_JOBS,
        Domain::Arts => &ARTS_JOBS,
    };
    let n_jobs = rng.gen_range(1..=config.max_occupations.clamp(1, 3));
    let occupations: Vec<String> = jobs
        .choose_multiple(rng, n_jobs)
        .map(|s| s.to_string())
        .collect();

    let mut fields = vec![
        Field {
            name: "name".into(),
            values: name,
        },
        Field {
            name: "birth_date".into(),
            values: vec![day, month, year],
        },
        Field {
            name: "nationality".into(),
            values: vec![nationality],
        },
        Field {
            name: "occupation".into(),
            values: occupations,
        },
    ];
    match domain {
        Domain::Sports => fields.push(Field {
            name: "team".into(),
            values: vec![TEAMS.choose(rng).expect("nonempty").to_string()],
        }),
        Domain::Arts => fields.push(Field {
            name: "genre".into(),
            values: vec![GENRES.choose(rng).expect("nonempty").to_string()],
        }),
    }

    let k = config.distractor_fields.min(DISTRACTORS.len());
    for (fname, pool) in DISTRACTORS.choose_multiple(rng, k) {
        let n = rng.gen_range(1..=2);
        let values = pool
            .choose_multiple(rng, n)
            .map(|s| s.to_string())
            .collect();
        fields.push(Field {
            name: fname.to_string(),
            values,
        });
    }
    if config.shuffle_fields {
        fields.shuffle(rng);
    }

    let infobox = Infobox { fields };
    let description = render_description(&infobox, domain);
    Example {
        infobox,
        description,
        domain: Some(domain),
    }
}

/// `n` pseudo-random biographies; identical `(seed, n, config)` give
/// identical output.
pub fn synth_generate(seed: u64, n: usize, config: &SynthConfig) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = config.name_pool.map(name_pool).unwrap_or_default();
    (0..n)
        .map(|_| generate_one(&mut rng, config, &pool))
        .collect()
}
