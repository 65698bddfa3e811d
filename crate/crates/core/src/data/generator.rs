//! Deterministic synthetic SLU corpus: sessions of templated queries with
//! gold hypotheses, ASR-style noise on failing sessions, gold rewrite
//! pairs, a rewrite-candidate set, and a held-out evaluation stream.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::EvalCase;
use crate::types::{
    normalize_text, CandidateRecord, NluHypothesis, RewritePair, Slot, Utterance,
};

/// Entity lists the templates draw from.
#[derive(Debug, Clone)]
pub struct Catalog {
    pub artists: Vec<String>,
    pub songs: Vec<String>,
    pub stations: Vec<String>,
    pub cities: Vec<String>,
    pub durations: Vec<String>,
    pub rooms: Vec<String>,
}

fn strs(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl Default for Catalog {
    fn default() -> Self {
        Catalog {
            artists: strs(&[
                "the velvet foxes", "marla quinn", "ivory harbor", "the midnight owls",
                "cedar and stone", "june wilder", "the paper lanterns", "felix arrow",
                "golden meridian", "the quiet engines", "rosa delmar", "the tin sparrows",
                "harlan reed", "violet syndicate", "the copper finches", "naomi vale",
                "the glass pilots", "orson bright", "silver atlas", "the wandering keys",
                "petra lane", "the ember choir", "august moon band", "lyric and the waves",
                "the neon herons", "dahlia frost", "the salt flats trio", "milo hart",
                "the crimson larks", "sage winters", "the hollow pines", "ezra knox",
                "the lantern bearers", "opal reyes", "the static bloom", "finn calloway",
                "the marble skies", "ruby tempest", "the driftwood band", "clara voss",
                "the sunfall collective", "jasper cole", "the echo garden", "nina marlowe",
                "the iron petals", "theo banks", "the misty canyon", "ava sterling",
            ]),
            songs: strs(&[
                "old town road", "envy me", "midnight train", "river of gold", "paper hearts",
                "electric dawn", "summer rain", "broken compass", "silent thunder",
                "neon skyline", "wild honey", "falling embers", "ocean avenue", "velvet sky",
                "morning glory", "lost in the echo", "crimson tide", "silver lining",
                "dancing shadows", "burning bridges", "cold november", "golden hour",
                "restless heart", "fading lights", "thunder road", "sweet disaster",
                "hollow moon", "gravity falls", "stolen kisses", "winter bones",
                "glass houses", "runaway dreams", "amber waves", "quiet storm",
                "painted wings", "secret garden", "shattered glass", "midnight mile",
                "evergreen", "wildfire smoke", "lonely lighthouse", "driftwood",
                "starlight motel", "rusty anchor", "honey and smoke", "northern lights",
                "tidal wave", "desert rose", "ivory tower", "mountain song",
                "firefly nights", "emerald city", "harvest moon", "sapphire rain",
                "broken arrows", "city of ghosts", "dandelion wine", "velvet morning",
                "canyon echoes", "silverback", "the long way home", "tangled wires",
                "blue neon", "gasoline rainbows", "marble eyes", "hurricane season",
                "cherry blossom", "iron butterfly", "late night radio", "coastal highway",
                "phantom limb", "sugar pines", "wolf at the door", "alpine meadow",
                "pocket full of stars", "jericho", "tumbleweed", "high tide",
                "low fidelity", "satellite heart", "clockwork", "honeycomb",
                "barefoot summer", "mirror maze", "stone fruit", "afterglow",
                "night swimming", "paper planes", "magnolia street", "yellow umbrella",
            ]),
            stations: strs(&[
                "smooth jazz", "classic rock", "morning chill", "deep focus", "retro wave",
                "country roads", "city beats", "late lounge", "indie surf", "blues corner",
                "symphony hall", "reggae island", "electro pulse", "folk fire",
                "latin heat", "soul kitchen", "piano bar", "garage band", "opera house",
                "throwback hits", "acoustic cafe", "rainy day", "road trip", "study beats",
            ]),
            cities: strs(&[
                "ashford", "briar glen", "cedar rapids", "dunmore", "eastvale", "fairhaven",
                "galeton", "harborview", "ironwood", "junction city", "kelsey point",
                "lakewood", "maple falls", "northgate", "oakridge", "pinecrest",
                "quarry bay", "redmond", "silver creek", "thornton", "union mills",
                "vista verde", "westbrook", "yellowpine", "zephyr hills", "brookside",
                "clearwater", "dove canyon", "elm grove", "foxborough", "glenrose",
                "hazel park", "indigo bay", "juniper flats", "kingsmill", "larkspur",
            ]),
            durations: strs(&[
                "five", "ten", "fifteen", "twenty", "twenty five", "thirty", "forty five",
                "sixty", "ninety", "three", "seven", "twelve",
            ]),
            rooms: strs(&[
                "living room", "kitchen", "bedroom", "office", "hallway", "garage",
                "basement", "porch", "nursery", "den",
            ]),
        }
    }
}

impl Catalog {
    fn list(&self, slot: &str) -> &[String] {
        match slot {
            "artist" => &self.artists,
            "song" => &self.songs,
            "station" => &self.stations,
            "city" => &self.cities,
            "duration" => &self.durations,
            "room" => &self.rooms,
            _ => &[],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, list) in [
            ("artists", &self.artists),
            ("songs", &self.songs),
            ("stations", &self.stations),
            ("cities", &self.cities),
            ("durations", &self.durations),
            ("rooms", &self.rooms),
        ] {
            if list.is_empty() {
                return Err(Error::validation(format!("catalog list {name} is empty")));
            }
        }
        Ok(())
    }
}

/// One query pattern; `{slot}` placeholders draw from the catalog.
#[derive(Debug, Clone)]
pub struct Template {
    pub domain: &'static str,
    pub intent: &'static str,
    pub pattern: &'static str,
}

const fn t(domain: &'static str, intent: &'static str, pattern: &'static str) -> Template {
    Template {
        domain,
        intent,
        pattern,
    }
}

pub fn default_templates() -> Vec<Template> {
    vec![
        t("music", "playmusic", "play {song}"),
        t("music", "playmusic", "play {song} by {artist}"),
        t("music", "playmusic", "play the song {song}"),
        t("music", "playmusic", "i want to hear {song} by {artist}"),
        t("music", "playmusic", "put on {song}"),
        t("music", "playartist", "play some {artist}"),
        t("music", "playartist", "play music by {artist}"),
        t("music", "playstation", "play {station} radio"),
        t("music", "playstation", "tune to {station}"),
        t("music", "playstation", "switch to the {station} station"),
        t("weather", "getweather", "what is the weather in {city}"),
        t("weather", "getweather", "weather forecast for {city}"),
        t("weather", "getweather", "will it rain in {city}"),
        t("weather", "getweather", "how cold is it in {city} today"),
        t("timer", "settimer", "set a timer for {duration} minutes"),
        t("timer", "settimer", "timer for {duration} minutes"),
        t("home", "turnonlight", "turn on the {room} lights"),
        t("home", "turnonlight", "lights on in the {room}"),
    ]
}

fn slot_type_for(placeholder: &str) -> &'static str {
    match placeholder {
        "artist" => "artistname",
        "song" => "songname",
        "station" => "stationname",
        "city" => "cityname",
        "duration" => "duration",
        "room" => "roomname",
        _ => "unknown",
    }
}

const CANCEL_TURNS: [(&str, &str); 5] = [
    ("cancel", "cancelintent"),
    ("cancel that", "cancelintent"),
    ("never mind", "cancelintent"),
    ("stop", "stopintent"),
    ("stop it", "stopintent"),
];

/// ASR-style corruption knobs: character confusions inside slot values,
/// plus word drop/swap over the final token sequence.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    pub char_confusions: Vec<(char, char)>,
    /// Probability that a confusable character flips.
    pub confusion_p: f64,
    pub word_drop_p: f64,
    pub word_swap_p: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            char_confusions: vec![
                ('a', 'e'), ('e', 'i'), ('i', 'y'), ('o', 'u'), ('u', 'o'),
                ('t', 'd'), ('d', 't'), ('n', 'm'), ('m', 'n'), ('s', 'z'),
                ('r', 'l'), ('l', 'r'), ('b', 'p'), ('k', 'c'), ('g', 'k'),
                ('v', 'w'), ('w', 'v'), ('y', 'e'),
            ],
            confusion_p: 0.18,
            word_drop_p: 0.08,
            word_swap_p: 0.08,
        }
    }
}

impl NoiseModel {
    pub fn silent() -> Self {
        NoiseModel {
            char_confusions: Vec::new(),
            confusion_p: 0.0,
            word_drop_p: 0.0,
            word_swap_p: 0.0,
        }
    }

    fn confusion_for(&self, c: char) -> Option<char> {
        self.char_confusions
            .iter()
            .find(|&&(from, _)| from == c)
            .map(|&(_, to)| to)
    }

    fn noise_value(&self, value: &str, rng: &mut ChaCha8Rng) -> String {
        value
            .chars()
            .map(|c| match self.confusion_for(c) {
                Some(to) if rng.gen::<f64>() < self.confusion_p => to,
                _ => c,
            })
            .collect()
    }

    /// Guaranteed change: flip the first confusable character, or bump the
    /// first alphabetic one.
    fn force_noise_value(&self, value: &str) -> String {
        let mut chars: Vec<char> = value.chars().collect();
        for slot in chars.iter_mut() {
            if let Some(to) = self.confusion_for(*slot) {
                *slot = to;
                return chars.into_iter().collect();
            }
        }
        for slot in chars.iter_mut() {
            if slot.is_ascii_alphabetic() {
                *slot = if *slot == 'z' { 'a' } else { (*slot as u8 + 1) as char };
                return chars.into_iter().collect();
            }
        }
        let mut s: String = chars.into_iter().collect();
        s.push('x');
        s
    }

    fn drop_and_swap(&self, tokens: Vec<String>, rng: &mut ChaCha8Rng) -> Vec<String> {
        let mut kept: Vec<String> = tokens
            .iter()
            .filter(|_| !(rng.gen::<f64>() < self.word_drop_p))
            .cloned()
            .collect();
        if kept.is_empty() {
            kept.push(tokens[0].clone());
        }
        let mut i = 0;
        while i + 1 < kept.len() {
            if rng.gen::<f64>() < self.word_swap_p {
                kept.swap(i, i + 1);
                i += 2;
            } else {
                i += 1;
            }
        }
        kept
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("confusion_p", self.confusion_p),
            ("word_drop_p", self.word_drop_p),
            ("word_swap_p", self.word_swap_p),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::validation(format!("{name} {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_users: usize,
    pub n_sessions: usize,
    pub catalog: Catalog,
    pub templates: Vec<Template>,
    pub noise: NoiseModel,
    /// Probability a session opens with a defective query.
    pub p_fail: f64,
    pub max_rephrases: usize,
    /// Probability a non-failing session ends in a cancel/stop turn.
    pub p_cancel: f64,
    /// Fraction of failing sessions held out as evaluation cases.
    pub eval_fraction: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 1,
            n_users: 100,
            n_sessions: 1000,
            catalog: Catalog::default(),
            templates: default_templates(),
            noise: NoiseModel::default(),
            p_fail: 0.3,
            max_rephrases: 3,
            p_cancel: 0.05,
            eval_fraction: 0.2,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        self.catalog.validate()?;
        self.noise.validate()?;
        if self.templates.is_empty() {
            return Err(Error::validation("template set is empty"));
        }
        for (name, p) in [
            ("p_fail", self.p_fail),
            ("p_cancel", self.p_cancel),
            ("eval_fraction", self.eval_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::validation(format!("{name} {p} outside [0, 1]")));
            }
        }
        if self.n_users == 0 {
            return Err(Error::validation("n_users must be >= 1"));
        }
        if self.max_rephrases == 0 {
            return Err(Error::validation("max_rephrases must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedCorpus {
    /// Training-split utterances, session by session.
    pub utterances: Vec<Utterance>,
    /// Gold (defective -> clean) pairs from training failing sessions.
    pub gold_pairs: Vec<RewritePair>,
    /// Deduplicated clean query texts with hypotheses and frequencies.
    pub candidates: Vec<CandidateRecord>,
    /// Held-out (defective query, clean gold) cases.
    pub eval_cases: Vec<EvalCase>,
}

/// One clean query with its filled slot values.
struct CleanQuery {
    text: String,
    hyp: NluHypothesis,
    template_idx: usize,
    values: Vec<(String, String)>, // (placeholder, value)
}

fn fill_template(
    templates: &[Template],
    idx: usize,
    values: &[(String, String)],
) -> (String, NluHypothesis) {
    let tpl = &templates[idx];
    let mut text = String::new();
    let mut slots = Vec::new();
    for tok in tpl.pattern.split_whitespace() {
        let piece = if let Some(name) = tok.strip_prefix('{').and_then(|s| s.strip_suffix('}')) {
            let value = &values
                .iter()
                .find(|(ph, _)| ph == name)
                .expect("placeholder filled")
                .1;
            slots.push(Slot::new(slot_type_for(name), value.clone()));
            value.clone()
        } else {
            tok.to_string()
        };
        if !text.is_empty() {
            text.push(' ');
        }
        text.push_str(&piece);
    }
    let hyp = NluHypothesis::new(tpl.domain, tpl.intent, slots).expect("valid hypothesis");
    (normalize_text(&text), hyp)
}

fn draw_clean(
    cfg: &GeneratorConfig,
    template_idx: usize,
    rng: &mut ChaCha8Rng,
) -> CleanQuery {
    let tpl = &cfg.templates[template_idx];
    let mut values = Vec::new();
    for tok in tpl.pattern.split_whitespace() {
        if let Some(name) = tok.strip_prefix('{').and_then(|s| s.strip_suffix('}')) {
            let list = cfg.catalog.list(name);
            let value = list.choose(rng).expect("catalog validated non-empty").clone();
            values.push((name.to_string(), value));
        }
    }
    let (text, hyp) = fill_template(&cfg.templates, template_idx, &values);
    CleanQuery {
        text,
        hyp,
        template_idx,
        values,
    }
}

/// A corrupted rendering of `clean`: char confusions inside the slot
/// values, then word drop/swap; the hypothesis carries the corrupted
/// values. Guaranteed to differ from the clean text.
fn corrupt(
    cfg: &GeneratorConfig,
    clean: &CleanQuery,
    heavy: bool,
    rng: &mut ChaCha8Rng,
) -> (String, NluHypothesis) {
    let noised: Vec<(String, String)> = clean
        .values
        .iter()
        .map(|(ph, v)| (ph.clone(), cfg.noise.noise_value(v, rng)))
        .collect();
    let (text, hyp) = fill_template(&cfg.templates, clean.template_idx, &noised);
    let text = if heavy {
        let tokens: Vec<String> = text.split_whitespace().map(str::to_string).collect();
        normalize_text(&cfg.noise.drop_and_swap(tokens, rng).join(" "))
    } else {
        text
    };
    if text != clean.text {
        return (text, hyp);
    }
    // nothing fired: force a change in the first slot value
    let mut forced = clean.values.clone();
    if let Some(first) = forced.first_mut() {
        first.1 = cfg.noise.force_noise_value(&first.1);
    }
    fill_template(&cfg.templates, clean.template_idx, &forced)
}

fn pick_template(cfg: &GeneratorConfig, prev: Option<usize>, rng: &mut ChaCha8Rng) -> usize {
    if let Some(p) = prev {
        // sessions tend to stay on one intent
        if rng.gen::<f64>() < 0.6 {
            let intent = cfg.templates[p].intent;
            let same: Vec<usize> = (0..cfg.templates.len())
                .filter(|&i| cfg.templates[i].intent == intent)
                .collect();
            return *same.choose(rng).unwrap();
        }
    }
    rng.gen_range(0..cfg.templates.len())
}

/// Templates usable for failing sessions (they need at least one slot to
/// corrupt).
fn slotted_templates(cfg: &GeneratorConfig) -> Vec<usize> {
    (0..cfg.templates.len())
        .filter(|&i| cfg.templates[i].pattern.contains('{'))
        .collect()
}

pub fn generate_corpus(cfg: &GeneratorConfig) -> Result<GeneratedCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let slotted = slotted_templates(cfg);
    if slotted.is_empty() {
        return Err(Error::validation("no template has a slot to corrupt"));
    }

    const BASE_TS: i64 = 1_600_000_000_000;
    let mut clocks: Vec<i64> = (0..cfg.n_users)
        .map(|u| BASE_TS + (u as i64) * 7_200_000)
        .collect();

    let mut utterances = Vec::new();
    let mut gold_pairs = Vec::new();
    let mut eval_cases = Vec::new();
    let mut candidates: Vec<CandidateRecord> = Vec::new();
    let mut cand_slot: std::collections::HashMap<String, usize> = std::collections::HashMap::new();

    let add_candidate = |candidates: &mut Vec<CandidateRecord>,
                             cand_slot: &mut std::collections::HashMap<String, usize>,
                             text: &str,
                             hyp: &NluHypothesis| {
        match cand_slot.get(text) {
            Some(&i) => candidates[i].freq += 1,
            None => {
                cand_slot.insert(text.to_string(), candidates.len());
                candidates.push(CandidateRecord {
                    text: text.to_string(),
                    nlu: Some(hyp.clone()),
                    freq: 1,
                });
            }
        }
    };

    for s in 0..cfg.n_sessions {
        let user_idx = s % cfg.n_users;
        let user = format!("u{user_idx:05}");
        let mut ts = clocks[user_idx];
        let mut turns: Vec<Utterance> = Vec::new();
        let step = |ts: &mut i64, rng: &mut ChaCha8Rng| {
            let t = *ts;
            *ts += rng.gen_range(2_000..=40_000);
            t
        };

        let failing = rng.gen_bool(cfg.p_fail);
        if failing {
            let is_eval = rng.gen_bool(cfg.eval_fraction);
            let tpl = *slotted.choose(&mut rng).unwrap();
            let clean = draw_clean(cfg, tpl, &mut rng);
            let attempts = rng.gen_range(1..=cfg.max_rephrases);

            let (def_text, def_hyp) = corrupt(cfg, &clean, true, &mut rng);
            let defective =
                Utterance::new(&user, step(&mut ts, &mut rng), &def_text, Some(def_hyp))?;
            turns.push(defective.clone());
            for _ in 1..attempts {
                let (mid_text, mid_hyp) = corrupt(cfg, &clean, false, &mut rng);
                turns.push(Utterance::new(
                    &user,
                    step(&mut ts, &mut rng),
                    &mid_text,
                    Some(mid_hyp),
                )?);
            }
            let clean_utt = Utterance::new(
                &user,
                step(&mut ts, &mut rng),
                &clean.text,
                Some(clean.hyp.clone()),
            )?;
            turns.push(clean_utt.clone());
            add_candidate(&mut candidates, &mut cand_slot, &clean.text, &clean.hyp);

            let pair = RewritePair::new(defective.clone(), clean_utt.clone())
                .expect("corrupt() guarantees different text");
            if is_eval {
                eval_cases.push(EvalCase::new(defective, clean_utt)?);
                // eval sessions stay out of the pretraining stream
            } else {
                gold_pairs.push(pair);
                utterances.extend(turns.drain(..));
            }
        } else {
            let cancel = rng.gen_bool(cfg.p_cancel);
            let n_clean = if cancel {
                rng.gen_range(1..=3)
            } else {
                rng.gen_range(2..=6)
            };
            let mut prev = None;
            for _ in 0..n_clean {
                let tpl = pick_template(cfg, prev, &mut rng);
                prev = Some(tpl);
                let q = draw_clean(cfg, tpl, &mut rng);
                turns.push(Utterance::new(
                    &user,
                    step(&mut ts, &mut rng),
                    &q.text,
                    Some(q.hyp.clone()),
                )?);
                add_candidate(&mut candidates, &mut cand_slot, &q.text, &q.hyp);
            }
            if cancel {
                let &(text, intent) = CANCEL_TURNS.choose(&mut rng).unwrap();
                let hyp = NluHypothesis::new("global", intent, vec![])?;
                turns.push(Utterance::new(&user, step(&mut ts, &mut rng), text, Some(hyp.clone()))?);
                add_candidate(&mut candidates, &mut cand_slot, &normalize_text(text), &hyp);
            }
            utterances.extend(turns.drain(..));
        }

        clocks[user_idx] = ts + 60_000 + rng.gen_range(0..3_600_000);
    }

    Ok(GeneratedCorpus {
        utterances,
        gold_pairs,
        candidates,
        eval_cases,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{filter_sessions, segment_sessions};

    #[test]
    fn generation_is_deterministic() {
        let cfg = GeneratorConfig {
            n_sessions: 50,
            n_users: 7,
            ..GeneratorConfig::default()
        };
        let a = generate_corpus(&cfg).unwrap();
        let b = generate_corpus(&cfg).unwrap();
        assert_eq!(a.utterances, b.utterances);
        assert_eq!(a.candidates, b.candidates);
        assert_eq!(a.eval_cases.len(), b.eval_cases.len());
        assert!(!a.utterances.is_empty());
    }

    #[test]
    fn silent_generator_produces_only_clean_turns() {
        let cfg = GeneratorConfig {
            n_sessions: 40,
            n_users: 5,
            noise: NoiseModel::silent(),
            p_fail: 0.0,
            p_cancel: 0.0,
            ..GeneratorConfig::default()
        };
        let corpus = generate_corpus(&cfg).unwrap();
        assert!(corpus.gold_pairs.is_empty());
        assert!(corpus.eval_cases.is_empty());
        assert!(corpus.utterances.iter().all(|u| u.nlu.is_some()));
        // every text is in the candidate set
        let texts: std::collections::HashSet<&str> =
            corpus.candidates.iter().map(|c| c.text.as_str()).collect();
        assert!(corpus.utterances.iter().all(|u| texts.contains(u.text.as_str())));
    }

    #[test]
    fn failing_fraction_tracks_p_fail() {
        let cfg = GeneratorConfig {
            n_sessions: 10_000,
            n_users: 300,
            p_fail: 0.3,
            ..GeneratorConfig::default()
        };
        let corpus = generate_corpus(&cfg).unwrap();
        let failing = corpus.gold_pairs.len() + corpus.eval_cases.len();
        let fraction = failing as f64 / cfg.n_sessions as f64;
        assert!(
            (fraction - 0.3).abs() <= 0.02,
            "failing fraction {fraction} off target"
        );
    }

    #[test]
    fn gold_pairs_target_clean_candidates() {
        let cfg = GeneratorConfig {
            n_sessions: 300,
            n_users: 20,
            ..GeneratorConfig::default()
        };
        let corpus = generate_corpus(&cfg).unwrap();
        assert!(!corpus.gold_pairs.is_empty());
        let texts: std::collections::HashSet<&str> =
            corpus.candidates.iter().map(|c| c.text.as_str()).collect();
        for p in &corpus.gold_pairs {
            assert_ne!(p.source.text, p.target.text);
            assert!(texts.contains(p.target.text.as_str()));
        }
        for c in &corpus.eval_cases {
            assert!(texts.contains(c.gold.text.as_str()));
            assert!(c.gold.nlu.is_some());
        }
    }

    #[test]
    fn generated_stream_segments_back_into_valid_sessions() {
        let cfg = GeneratorConfig {
            n_sessions: 120,
            n_users: 10,
            ..GeneratorConfig::default()
        };
        let corpus = generate_corpus(&cfg).unwrap();
        let sessions = segment_sessions(&corpus.utterances);
        let total: usize = sessions.iter().map(|s| s.len()).sum();
        assert_eq!(total, corpus.utterances.len());
        // filtering keeps the multi-turn non-cancel sessions
        let kept = filter_sessions(sessions);
        assert!(!kept.is_empty());
        for s in &kept {
            assert!(s.len() >= 2);
        }
    }

    #[test]
    fn empty_catalog_is_rejected() {
        let cfg = GeneratorConfig {
            catalog: Catalog {
                artists: vec![],
                ..Catalog::default()
            },
            ..GeneratorConfig::default()
        };
        assert!(generate_corpus(&cfg).is_err());
    }
}
