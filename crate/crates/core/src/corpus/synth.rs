//! Synthetic corpora with planted ground truth.
//!
//! Event sentences are rendered from per-type templates, so every argument's
//! character span is known exactly. Each user carries a latent preference
//! over event types and over news categories; the click probability of a
//! candidate is a logistic function of the user's affinity for the
//! candidate's planted event types and category.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::ee::{AnnotatedEvent, AnnotatedSentence, ArgumentSpan};
use super::logs::{EventRecord, ImpressionLog, NewsItem};
use super::schema::{EventSchema, EventTypeDef};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Pool {
    Company,
    Number,
    Person,
    Product,
    Place,
    Magnitude,
    Money,
    Agency,
    Percent,
    Contest,
}

impl Pool {
    fn values(self) -> &'static [&'static str] {
        match self {
            Pool::Company => &[
                "Charles Schwab",
                "Acme Corp",
                "Globex",
                "Initech",
                "Umbrella Group",
                "Stark Industries",
                "Wayne Holdings",
                "Hooli",
                "Vandelay Imports",
                "Soylent Foods",
                "Tyrell Systems",
                "Cyberdyne",
            ],
            Pool::Number => &["600", "1200", "45", "3000", "250", "80", "15000", "900"],
            Pool::Person => &[
                "Alice Chen",
                "Bob Li",
                "Carol Wang",
                "David Zhang",
                "Eve Liu",
                "Frank Wu",
                "Grace Zhao",
                "Henry Sun",
            ],
            Pool::Product => &[
                "Model Z phone",
                "Nova tablet",
                "Aurora car",
                "Pixel watch",
                "Orbit drone",
                "Quantum chip",
                "Echo speaker",
                "Falcon laptop",
            ],
            Pool::Place => &[
                "Sichuan", "Yunnan", "Tokyo", "Manila", "Lima", "Ankara", "Kathmandu", "Jakarta",
            ],
            Pool::Magnitude => &["5", "6", "7", "8"],
            Pool::Money => &[
                "2 billion dollars",
                "300 million yuan",
                "45 million dollars",
                "1 billion yuan",
                "80 million euros",
                "6 billion yuan",
            ],
            Pool::Agency => &[
                "the police",
                "the SEC",
                "the CSRC",
                "Interpol",
                "the FBI",
                "the city court",
            ],
            Pool::Percent => &["10 percent", "9 percent", "7 percent", "12 percent", "5 percent"],
            Pool::Contest => &[
                "Open Cup",
                "World Series",
                "Grand Prix",
                "City Marathon",
                "Masters",
                "Spring Classic",
            ],
        }
    }
}

struct TypeTemplate {
    name: &'static str,
    roles: &'static [(&'static str, Pool)],
    templates: &'static [&'static str],
}

/// Built-in event types, ordered so that any prefix spans several classes.
const BANK: &[TypeTemplate] = &[
    TypeTemplate {
        name: "Organizational-Relations/Layoff",
        roles: &[("layoff executor", Pool::Company), ("number of job cut", Pool::Number)],
        templates: &[
            "{layoff executor} announced plans to cut {number of job cut} jobs.",
            "{layoff executor} will lay off {number of job cut} workers this year.",
        ],
    },
    TypeTemplate {
        name: "Deal/Acquisition",
        roles: &[("acquirer", Pool::Company), ("acquired party", Pool::Company)],
        templates: &[
            "{acquirer} agreed to acquire {acquired party} in an all cash deal.",
            "{acquired party} will be bought by {acquirer} next quarter.",
        ],
    },
    TypeTemplate {
        name: "Product-Behavior/Release",
        roles: &[("publisher", Pool::Company), ("product", Pool::Product)],
        templates: &[
            "{publisher} released the {product} to the public.",
            "The {product} was launched by {publisher} at a press event.",
        ],
    },
    TypeTemplate {
        name: "Disaster/Earthquake",
        roles: &[("location", Pool::Place), ("magnitude", Pool::Magnitude)],
        templates: &[
            "A magnitude {magnitude} earthquake struck {location} early today.",
            "{location} was shaken by a quake of magnitude {magnitude} overnight.",
        ],
    },
    TypeTemplate {
        name: "Finance/Earnings",
        roles: &[("company", Pool::Company), ("profit", Pool::Money)],
        templates: &[
            "{company} reported a quarterly profit of {profit}.",
            "Quarterly earnings at {company} rose to {profit} on strong sales.",
        ],
    },
    TypeTemplate {
        name: "Justice/Arrest",
        roles: &[("arrested person", Pool::Person), ("agency", Pool::Agency)],
        templates: &[
            "{arrested person} was arrested by {agency} on fraud charges.",
            "{agency} detained {arrested person} after a long investigation.",
        ],
    },
    TypeTemplate {
        name: "Competition/Win",
        roles: &[("winner", Pool::Person), ("contest", Pool::Contest)],
        templates: &[
            "{winner} won the {contest} after a close final.",
            "The {contest} title went to {winner} on Sunday.",
        ],
    },
    TypeTemplate {
        name: "Organizational-Relations/Join",
        roles: &[("joiner", Pool::Person), ("organization", Pool::Company)],
        templates: &[
            "{joiner} joined {organization} as a senior director.",
            "{organization} hired {joiner} to lead its new unit.",
        ],
    },
    TypeTemplate {
        name: "Deal/Limit-Down",
        roles: &[("stock", Pool::Company), ("drop", Pool::Percent)],
        templates: &[
            "Shares of {stock} hit the limit down after falling {drop}.",
            "{stock} plunged {drop} and closed at the limit down.",
        ],
    },
    TypeTemplate {
        name: "Product-Behavior/Recall",
        roles: &[("recaller", Pool::Company), ("recalled product", Pool::Product)],
        templates: &[
            "{recaller} recalled the {recalled product} over safety concerns.",
            "A defect forced {recaller} to pull the {recalled product} from stores.",
        ],
    },
    TypeTemplate {
        name: "Disaster/Fire",
        roles: &[("location", Pool::Place), ("casualties", Pool::Number)],
        templates: &[
            "A fire broke out in {location} leaving {casualties} people injured.",
            "Firefighters in {location} rescued {casualties} residents from a blaze.",
        ],
    },
    TypeTemplate {
        name: "Finance/Financing",
        roles: &[("financier", Pool::Company), ("amount", Pool::Money)],
        templates: &[
            "{financier} raised {amount} in a new funding round.",
            "Investors poured {amount} into {financier} this week.",
        ],
    },
    TypeTemplate {
        name: "Justice/Fine",
        roles: &[
            ("regulator", Pool::Agency),
            ("fined party", Pool::Company),
            ("penalty", Pool::Money),
        ],
        templates: &[
            "{regulator} fined {fined party} {penalty} for misconduct.",
            "{fined party} must pay {penalty} after a ruling by {regulator}.",
        ],
    },
    TypeTemplate {
        name: "Competition/Lose",
        roles: &[("loser", Pool::Person), ("contest", Pool::Contest)],
        templates: &[
            "{loser} was knocked out of the {contest} in the first round.",
            "An upset at the {contest} ended the run of {loser} early.",
        ],
    },
    TypeTemplate {
        name: "Organizational-Relations/Quit",
        roles: &[("departer", Pool::Person), ("organization", Pool::Company)],
        templates: &[
            "{departer} resigned from {organization} on short notice.",
            "{organization} confirmed that {departer} has left the board.",
        ],
    },
    TypeTemplate {
        name: "Deal/Sell",
        roles: &[("seller", Pool::Company), ("asset", Pool::Product)],
        templates: &[
            "{seller} sold its {asset} business to a rival.",
            "The {asset} unit was sold off by {seller} for cash.",
        ],
    },
];

pub const MAX_SYNTHETIC_TYPES: usize = BANK.len();

const CATEGORIES: &[&str] = &[
    "bulletin",
    "stock comments",
    "expert comments",
    "research reports",
    "company news",
    "macro economy",
    "industry trends",
    "global markets",
];

const TITLE_WORDS: &[&str] = &[
    "market", "update", "today", "report", "news", "brief", "watch", "daily", "insight", "alert",
    "weekly", "focus", "digest", "live", "analysis", "outlook",
];

/// First timestamp of generated impressions: 2019-10-30T00:00:00Z.
const EPOCH_START: i64 = 1_572_393_600;
const SPAN_SECONDS: i64 = 9 * 24 * 3600;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_users: usize,
    pub n_news: usize,
    pub n_impressions: usize,
    pub n_event_types: usize,
    pub n_categories: usize,
    /// Slope of the click logistic; 0 makes clicks independent of content,
    /// infinity makes them a hard threshold on affinity.
    pub sharpness: f64,
    /// Scale of the latent logits behind each user's preference vectors.
    pub interest_concentration: f64,
    /// Share of affinity from event types; the rest comes from category.
    pub event_weight: f64,
    pub click_threshold: f64,
    pub candidates_per_impression: usize,
    pub max_events_per_news: usize,
    pub title_len: usize,
    /// Probability that a title carries one token of its category name.
    pub title_leak: f64,
    pub n_ee_sentences: usize,
    pub n_ee_test_sentences: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_users: 200,
            n_news: 500,
            n_impressions: 5000,
            n_event_types: MAX_SYNTHETIC_TYPES,
            n_categories: 6,
            sharpness: 12.0,
            interest_concentration: 2.5,
            event_weight: 0.6,
            click_threshold: 0.5,
            candidates_per_impression: 10,
            max_events_per_news: 3,
            title_len: 4,
            title_leak: 0.3,
            n_ee_sentences: 500,
            n_ee_test_sentences: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserInterest {
    pub etype_weights: BTreeMap<String, f64>,
    pub category_weights: BTreeMap<String, f64>,
}

/// Every latent behind a synthetic corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub users: BTreeMap<String, UserInterest>,
    /// Planted event types of each news item.
    pub news_event_types: BTreeMap<String, Vec<String>>,
    pub news_category: BTreeMap<String, String>,
    pub event_weight: f64,
}

impl GroundTruth {
    /// Normalized affinity in `[0, 1]` of `user_id` for `news_id`.
    pub fn affinity(&self, user_id: &str, news_id: &str) -> Option<f64> {
        let u = self.users.get(user_id)?;
        let types = self.news_event_types.get(news_id)?;
        let cat = self.news_category.get(news_id)?;
        let max_t = u.etype_weights.values().copied().fold(0.0, f64::max);
        let max_c = u.category_weights.values().copied().fold(0.0, f64::max);
        let type_part = if types.is_empty() || max_t <= 0.0 {
            0.0
        } else {
            types
                .iter()
                .map(|t| u.etype_weights.get(t).copied().unwrap_or(0.0))
                .sum::<f64>()
                / (types.len() as f64 * max_t)
        };
        let cat_part = if max_c <= 0.0 {
            0.0
        } else {
            u.category_weights.get(cat).copied().unwrap_or(0.0) / max_c
        };
        Some(self.event_weight * type_part + (1.0 - self.event_weight) * cat_part)
    }
}

pub fn click_probability(sharpness: f64, affinity: f64, threshold: f64) -> f64 {
    let d = affinity - threshold;
    if sharpness.is_infinite() {
        if d > 0.0 {
            1.0
        } else if d < 0.0 {
            0.0
        } else {
            0.5
        }
    } else {
        eenr_tensor::sigmoid(sharpness * d)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub schema: EventSchema,
    pub ee_train: Vec<AnnotatedSentence>,
    pub ee_test: Vec<AnnotatedSentence>,
    /// News with bodies but no extracted events.
    pub news: Vec<NewsItem>,
    pub impressions: Vec<ImpressionLog>,
    pub truth: GroundTruth,
    /// Planted events of each news item, offsets relative to the body.
    pub gold_events: BTreeMap<String, Vec<EventRecord>>,
}

impl SyntheticCorpus {
    /// The news with their planted events attached in place of extracted ones.
    pub fn news_with_gold_events(&self) -> Vec<NewsItem> {
        self.news
            .iter()
            .map(|n| NewsItem {
                events: self.gold_events.get(&n.news_id).cloned().unwrap_or_default(),
                ..n.clone()
            })
            .collect()
    }
}

/// The schema made of the first `n` built-in event types.
pub fn synthetic_schema(n: usize) -> Result<EventSchema> {
    if n == 0 || n > BANK.len() {
        return Err(Error::Config(format!(
            "n_event_types must be in 1..={}, got {n}",
            BANK.len()
        )));
    }
    EventSchema::new(
        BANK[..n]
            .iter()
            .map(|t| EventTypeDef {
                name: t.name.to_owned(),
                roles: t.roles.iter().map(|(r, _)| (*r).to_owned()).collect(),
            })
            .collect(),
    )
}

/// Renders one sentence of type `bank[type_idx]`.
fn render_event(type_idx: usize, rng: &mut ChaCha8Rng) -> (String, AnnotatedEvent) {
    let tt = &BANK[type_idx];
    let template = *tt.templates.choose(rng).expect("templates");
    // distinct values per pool inside one sentence
    let mut used: Vec<&'static str> = Vec::new();
    let mut values: BTreeMap<&str, &'static str> = BTreeMap::new();
    for &(role, pool) in tt.roles {
        let choices: Vec<&'static str> = pool
            .values()
            .iter()
            .copied()
            .filter(|v| !used.contains(v))
            .collect();
        let v = *choices.choose(rng).expect("pool values");
        used.push(v);
        values.insert(role, v);
    }
    let mut text = String::new();
    let mut n_chars = 0usize;
    let mut arguments = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let lit = &rest[..open];
        text.push_str(lit);
        n_chars += lit.chars().count();
        let close = rest[open..].find('}').expect("closing brace") + open;
        let role = &rest[open + 1..close];
        let v = values[role];
        arguments.push(ArgumentSpan {
            role: role.to_owned(),
            argument: v.to_owned(),
            start: n_chars,
        });
        text.push_str(v);
        n_chars += v.chars().count();
        rest = &rest[close + 1..];
    }
    text.push_str(rest);
    // annotations in schema role order
    arguments.sort_by_key(|a| tt.roles.iter().position(|(r, _)| *r == a.role));
    (
        text,
        AnnotatedEvent {
            event_type: tt.name.to_owned(),
            arguments,
        },
    )
}

fn sentences(n: usize, n_types: usize, prefix: &str, rng: &mut ChaCha8Rng) -> Vec<AnnotatedSentence> {
    (0..n)
        .map(|i| {
            let t = rng.random_range(0..n_types);
            let (text, event) = render_event(t, rng);
            AnnotatedSentence {
                id: format!("{prefix}{i:05}"),
                text,
                events: vec![event],
            }
        })
        .collect()
}

fn softmax_weights(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let z: Vec<f64> = (0..n)
        .map(|_| { let z: f64 = StandardNormal.sample(rng); scale * z })
        .collect();
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn generate_synthetic(config: &SyntheticConfig, seed: u64) -> Result<SyntheticCorpus> {
    let c = config;
    if c.n_users == 0 || c.n_news == 0 {
        return Err(Error::Config("synthetic corpus needs at least one user and one news".into()));
    }
    if c.n_categories == 0 || c.n_categories > CATEGORIES.len() {
        return Err(Error::Config(format!(
            "n_categories must be in 1..={}",
            CATEGORIES.len()
        )));
    }
    if c.candidates_per_impression < 2 || c.candidates_per_impression > c.n_news {
        return Err(Error::Config(
            "candidates_per_impression must be in 2..=n_news".into(),
        ));
    }
    if c.max_events_per_news == 0 {
        return Err(Error::Config("max_events_per_news must be positive".into()));
    }
    if !(c.sharpness >= 0.0) {
        return Err(Error::Config("sharpness must be non-negative".into()));
    }
    let schema = synthetic_schema(c.n_event_types)?;
    let type_names = schema.event_type_names();
    let categories: Vec<String> = CATEGORIES[..c.n_categories]
        .iter()
        .map(|s| (*s).to_owned())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let ee_train = sentences(c.n_ee_sentences, c.n_event_types, "s", &mut rng);
    let ee_test = sentences(c.n_ee_test_sentences, c.n_event_types, "h", &mut rng);

    let mut news = Vec::with_capacity(c.n_news);
    let mut news_event_types = BTreeMap::new();
    let mut news_category = BTreeMap::new();
    let mut gold_events = BTreeMap::new();
    let mut news_type_idx: Vec<Vec<usize>> = Vec::with_capacity(c.n_news);
    let mut news_cat_idx = Vec::with_capacity(c.n_news);
    for i in 0..c.n_news {
        let id = format!("n{i:05}");
        let primary = rng.random_range(0..c.n_event_types);
        let k = rng.random_range(1..=c.max_events_per_news);
        let mut body = Vec::with_capacity(k);
        let mut types: Vec<usize> = Vec::new();
        let mut events = Vec::with_capacity(k);
        let mut offset = 0;
        for j in 0..k {
            let t = if j == 0 || rng.random_bool(0.5) {
                primary
            } else {
                rng.random_range(0..c.n_event_types)
            };
            let (text, ev) = render_event(t, &mut rng);
            events.push(EventRecord {
                class: schema.class_of(&ev.event_type).to_owned(),
                event_type: ev.event_type,
                arguments: ev
                    .arguments
                    .into_iter()
                    .map(|a| ArgumentSpan {
                        start: a.start + offset,
                        ..a
                    })
                    .collect(),
            });
            offset += text.chars().count() + 1;
            body.push(text);
            if !types.contains(&t) {
                types.push(t);
            }
        }
        let cat = rng.random_range(0..c.n_categories);
        let mut title: Vec<String> = (0..c.title_len)
            .map(|_| (*TITLE_WORDS.choose(&mut rng).expect("words")).to_owned())
            .collect();
        if c.title_len > 0 && rng.random_bool(c.title_leak.clamp(0.0, 1.0)) {
            let slot = rng.random_range(0..c.title_len);
            let keyword = categories[cat].split_whitespace().next().unwrap_or("");
            title[slot] = keyword.to_owned();
        }
        news_event_types.insert(
            id.clone(),
            types.iter().map(|&t| type_names[t].clone()).collect::<Vec<_>>(),
        );
        news_category.insert(id.clone(), categories[cat].clone());
        gold_events.insert(id.clone(), events);
        news_type_idx.push(types);
        news_cat_idx.push(cat);
        news.push(NewsItem {
            news_id: id,
            title,
            category: categories[cat].clone(),
            body: body.join(" "),
            events: Vec::new(),
        });
    }

    let mut users = BTreeMap::new();
    let mut user_ids = Vec::with_capacity(c.n_users);
    let mut user_latent: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(c.n_users);
    for u in 0..c.n_users {
        let id = format!("u{u:04}");
        let et = softmax_weights(c.n_event_types, c.interest_concentration, &mut rng);
        let ct = softmax_weights(c.n_categories, c.interest_concentration, &mut rng);
        users.insert(
            id.clone(),
            UserInterest {
                etype_weights: type_names.iter().cloned().zip(et.iter().copied()).collect(),
                category_weights: categories.iter().cloned().zip(ct.iter().copied()).collect(),
            },
        );
        user_ids.push(id);
        user_latent.push((et, ct));
    }
    let truth = GroundTruth {
        users,
        news_event_types,
        news_category,
        event_weight: c.event_weight,
    };

    let affinity = |u: usize, n: usize| -> f64 {
        let (et, ct) = &user_latent[u];
        let max_t = et.iter().copied().fold(0.0, f64::max);
        let max_c = ct.iter().copied().fold(0.0, f64::max);
        let types = &news_type_idx[n];
        let tp = types.iter().map(|&t| et[t]).sum::<f64>() / (types.len() as f64 * max_t);
        let cp = ct[news_cat_idx[n]] / max_c;
        c.event_weight * tp + (1.0 - c.event_weight) * cp
    };

    let mut stamps: Vec<i64> = (0..c.n_impressions)
        .map(|_| EPOCH_START + rng.random_range(0..SPAN_SECONDS))
        .collect();
    stamps.sort_unstable();
    let all_news: Vec<usize> = (0..c.n_news).collect();
    let mut impressions = Vec::with_capacity(c.n_impressions);
    for ts in stamps {
        let u = rng.random_range(0..c.n_users);
        let mut chosen = None;
        let mut last = None;
        for _ in 0..50 {
            let mut cands: Vec<usize> = all_news
                .choose_multiple(&mut rng, c.candidates_per_impression)
                .copied()
                .collect();
            cands.shuffle(&mut rng);
            let probs: Vec<f64> = cands
                .iter()
                .map(|&n| click_probability(c.sharpness, affinity(u, n), c.click_threshold))
                .collect();
            let clicks: Vec<bool> = probs.iter().map(|&p| rng.random_bool(p)).collect();
            let n_click = clicks.iter().filter(|&&x| x).count();
            if n_click > 0 && n_click < cands.len() {
                chosen = Some((cands, clicks));
                break;
            }
            last = Some((cands, probs));
        }
        let (cands, clicks) = match chosen {
            Some(x) => x,
            None => {
                // force the single most likely candidate to be the click
                let (cands, probs) = last.expect("at least one attempt");
                let best = (0..cands.len())
                    .max_by(|&a, &b| {
                        let (x, y) = (affinity(u, cands[a]), affinity(u, cands[b]));
                        x.total_cmp(&y).then(b.cmp(&a))
                    })
                    .expect("candidates");
                let clicks = (0..cands.len()).map(|i| i == best).collect();
                let _ = probs;
                (cands, clicks)
            }
        };
        let candidates: Vec<String> = cands.iter().map(|&n| news[n].news_id.clone()).collect();
        let clicked = candidates
            .iter()
            .zip(&clicks)
            .filter_map(|(id, &k)| k.then(|| id.clone()))
            .collect();
        impressions.push(ImpressionLog {
            user_id: user_ids[u].clone(),
            timestamp: ts,
            candidates,
            clicked,
        });
    }

    Ok(SyntheticCorpus {
        schema,
        ee_train,
        ee_test,
        news,
        impressions,
        truth,
        gold_events,
    })
}
