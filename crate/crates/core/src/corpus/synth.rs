use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{tokenize, write_jsonl, CorpusError, Label, LabeledSentence, SubDomain};

/// Word lists and templates driving the generator.
///
/// Trigger frames are shared by every class, so within a labeled sentence
/// only the keyword filling `{k}` carries the class. The general corpus puts
/// each class's keywords into contexts specific to that class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    pub keywords: BTreeMap<Label, Vec<String>>,
    /// Trigger phrases of four or five words; `{k}` is the keyword slot.
    pub frames: Vec<String>,
    /// Job-description sentences; `{trigger}` is followed by `{role}`.
    pub jd_templates: Vec<String>,
    pub njd_templates: Vec<String>,
    pub roles: Vec<String>,
    pub members: Vec<String>,
    pub fillers: BTreeMap<String, Vec<String>>,
    /// Per-class contexts for the general corpus; `{k2}` is a second keyword of the same class.
    pub contexts: BTreeMap<Label, Vec<String>>,
    /// Keyword-free general sentences.
    pub neutral: Vec<String>,
}

fn strs(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

impl Default for Lexicon {
    fn default() -> Self {
        let keywords = BTreeMap::from([
            (
                Label::Unbiased,
                strs(&[
                    "skilled", "experienced", "qualified", "motivated", "creative", "reliable", "certified", "dedicated",
                    "organised", "analytical", "curious", "diligent", "capable", "trained", "proactive", "licensed",
                ]),
            ),
            (
                Label::Gender,
                strs(&[
                    "male", "female", "masculine", "feminine", "manly", "womanly", "boyish", "girlish", "motherly",
                    "fatherly", "ladylike", "gentlemanly", "macho", "maternal", "brotherly", "sisterly",
                ]),
            ),
            (
                Label::Race,
                strs(&[
                    "white", "black", "asian", "caucasian", "hispanic", "latino", "arab", "african", "european",
                    "nordic", "indian", "chinese", "anglo", "slavic", "aboriginal", "mediterranean",
                ]),
            ),
            (
                Label::Age,
                strs(&[
                    "young", "youthful", "younger", "older", "elderly", "mature", "teenage", "millennial", "juvenile",
                    "retired", "aging", "boomer", "adolescent", "ageing", "grey", "sprightly",
                ]),
            ),
            (
                Label::Ambiguous,
                strs(&[
                    "suitable", "normal", "proper", "regular", "typical", "acceptable", "appropriate", "decent",
                    "conventional", "wholesome", "respectable", "agreeable", "presentable", "ordinary", "polished",
                    "likeable",
                ]),
            ),
        ]);
        let frames = strs(&[
            "looking for {k} and talented",
            "hiring only {k} and driven",
            "seeking bright and {k}",
            "recruiting {k} and ambitious",
            "keen to welcome {k}",
            "inviting applications from {k}",
            "searching for {k} and friendly",
        ]);
        let jd_templates = strs(&[
            "We are a {k} organisation {trigger} {role}.",
            "Our {dept} team is {trigger} {role} to join us.",
            "We are {trigger} {role} for our {city} office.",
            "The company is {trigger} {role} this year.",
            "Currently we are {trigger} {role} with strong skills.",
        ]);
        let njd_templates = strs(&[
            "Our {club} is {trigger} {member} this season.",
            "The event team is {trigger} {member} to attend.",
            "This newsletter is {trigger} {member} in the community.",
        ]);
        let roles = strs(&[
            "marketers", "engineers", "designers", "accountants", "nurses", "developers", "analysts", "cashiers",
            "drivers", "teachers", "writers", "managers",
        ]);
        let members = strs(&["volunteers", "members", "customers", "readers", "players", "guests", "students", "donors"]);
        let fillers = BTreeMap::from([
            ("dept".to_string(), strs(&["sales", "product", "support", "finance", "design", "data"])),
            ("city".to_string(), strs(&["london", "berlin", "toronto", "sydney", "dublin", "austin"])),
            ("club".to_string(), strs(&["club", "charity", "choir", "gallery", "library"])),
        ]);
        let contexts = BTreeMap::from([
            (
                Label::Unbiased,
                strs(&[
                    "a {k} engineer fixed the server before lunch.",
                    "the {k} nurse checked every chart twice.",
                    "the course turns out {k} graduates each spring.",
                    "{k} and {k2} workers finished the project early.",
                    "the report praised the {k} staff for their output.",
                ]),
            ),
            (
                Label::Gender,
                strs(&[
                    "{k} clothing is sold on the second floor.",
                    "the {k} voice in the choir was strong.",
                    "the survey asked about {k} and {k2} identity.",
                    "the play needed a {k} lead for the second act.",
                    "the shop stocks {k} fragrances near the door.",
                ]),
            ),
            (
                Label::Race,
                strs(&[
                    "the {k} community celebrated the festival downtown.",
                    "{k} cuisine is popular across the city.",
                    "the museum opened a wing on {k} and {k2} history.",
                    "many {k} families settled near the river.",
                    "the radio station plays {k} folk music on sundays.",
                ]),
            ),
            (
                Label::Age,
                strs(&[
                    "{k} people often remember the old songs.",
                    "the {k} generation uses phones differently.",
                    "the study followed {k} and {k2} adults for years.",
                    "a {k} audience filled the cinema on tuesday.",
                    "the clinic offers checkups for {k} patients.",
                ]),
            ),
            (
                Label::Ambiguous,
                strs(&[
                    "it seemed {k} enough for the board.",
                    "everything looked {k} on the surface.",
                    "the plan was {k} and {k2} in every way.",
                    "the guests found the evening quite {k}.",
                    "nobody could say what counted as {k} there.",
                ]),
            ),
        ]);
        let neutral = strs(&[
            "the train was late again this morning.",
            "the team scored twice in the second half.",
            "rain is expected over the weekend.",
            "the bakery sells fresh bread every day.",
            "the council approved the new bridge.",
            "prices rose slightly in the last quarter.",
            "the library extended its opening hours.",
            "a new park opened near the station.",
        ]);
        Self { keywords, frames, jd_templates, njd_templates, roles, members, fillers, contexts, neutral }
    }
}

impl Lexicon {
    fn validate(&self) -> Result<(), CorpusError> {
        for l in Label::ALL {
            if self.keywords.get(&l).is_none_or(Vec::is_empty) {
                return Err(CorpusError::Config(format!("lexicon has no keywords for {l}")));
            }
            if self.contexts.get(&l).is_none_or(Vec::is_empty) {
                return Err(CorpusError::Config(format!("lexicon has no contexts for {l}")));
            }
        }
        for f in &self.frames {
            let words = f.split_whitespace().count();
            if !(4..=5).contains(&words) || !f.contains("{k}") {
                return Err(CorpusError::Config(format!("frame {f:?} must have 4-5 words and a {{k}} slot")));
            }
        }
        if self.frames.is_empty() || self.jd_templates.is_empty() || self.njd_templates.is_empty() {
            return Err(CorpusError::Config("lexicon needs frames and templates for both sub-domains".into()));
        }
        let mut owner: BTreeMap<&str, Label> = BTreeMap::new();
        for (&l, words) in &self.keywords {
            for w in words {
                if tokenize(w).len() != 1 {
                    return Err(CorpusError::Config(format!("keyword {w:?} must be a single token")));
                }
                if let Some(prev) = owner.insert(w, l) {
                    return Err(CorpusError::Config(format!("keyword {w:?} listed under {prev} and {l}")));
                }
            }
        }
        Ok(())
    }

    fn keywords_of(&self, label: Label) -> &[String] {
        &self.keywords[&label]
    }
}

/// Keyword lookup: the class of the first lexicon keyword among the
/// sentence's tokens, UNBIASED when there is none.
pub fn oracle_label(lexicon: &Lexicon, sentence: &str) -> Label {
    for tok in tokenize(sentence) {
        for (&l, words) in &lexicon.keywords {
            if words.iter().any(|w| *w == tok) {
                return l;
            }
        }
    }
    Label::Unbiased
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub seed: u64,
    /// Labeled sentences.
    pub size: usize,
    pub class_mix: BTreeMap<Label, f64>,
    /// Share of labeled sentences drawn from job-description templates.
    pub jd_share: f64,
    pub general_sentences: usize,
    pub domain_sentences: usize,
    pub lexicon: Lexicon,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            size: 500,
            class_mix: BTreeMap::from([
                (Label::Unbiased, 0.50),
                (Label::Gender, 0.25),
                (Label::Race, 0.12),
                (Label::Age, 0.08),
                (Label::Ambiguous, 0.05),
            ]),
            jd_share: 0.7,
            general_sentences: 5000,
            domain_sentences: 2000,
            lexicon: Lexicon::default(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let sum: f64 = self.class_mix.values().sum();
        if self.class_mix.values().any(|&p| !(0.0..=1.0).contains(&p)) || (sum - 1.0).abs() > 1e-9 {
            return Err(CorpusError::Config(format!("class_mix must be non-negative and sum to 1, got {sum}")));
        }
        if !(0.0..=1.0).contains(&self.jd_share) {
            return Err(CorpusError::Config("jd_share must be in [0, 1]".into()));
        }
        self.lexicon.validate()
    }

    /// Exact per-class counts by largest remainder, ties in class order.
    pub fn class_counts(&self) -> Vec<(Label, usize)> {
        let quotas: Vec<(Label, f64)> =
            Label::ALL.iter().map(|&l| (l, self.class_mix.get(&l).copied().unwrap_or(0.0) * self.size as f64)).collect();
        let mut counts: Vec<usize> = quotas.iter().map(|(_, q)| (q + 1e-9).floor() as usize).collect();
        let mut order: Vec<usize> = (0..quotas.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = quotas[a].1 - counts[a] as f64;
            let fb = quotas[b].1 - counts[b] as f64;
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        let short = self.size - counts.iter().sum::<usize>();
        for &i in order.iter().take(short) {
            counts[i] += 1;
        }
        quotas.iter().zip(counts).map(|((l, _), n)| (*l, n)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub labeled: Vec<LabeledSentence>,
    /// Trigger phrase inside each labeled sentence, parallel to `labeled`.
    pub triggers: Vec<String>,
    /// All-topic unlabeled sentences.
    pub general: Vec<String>,
    /// Job-description unlabeled sentences.
    pub domain: Vec<String>,
}

impl SyntheticCorpus {
    /// Writes `labeled.jsonl`, `general.txt` and `domain.txt` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<(), CorpusError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        write_jsonl(dir.join("labeled.jsonl"), &self.labeled)?;
        fs::write(dir.join("general.txt"), lines(&self.general))?;
        fs::write(dir.join("domain.txt"), lines(&self.domain))?;
        Ok(())
    }
}

fn lines(v: &[String]) -> String {
    let mut s = v.join("\n");
    s.push('\n');
    s
}

struct Gen<'a> {
    lex: &'a Lexicon,
    jd_share: f64,
    rng: ChaCha8Rng,
}

impl Gen<'_> {
    fn pick<'b>(&mut self, v: &'b [String]) -> &'b str {
        v.choose(&mut self.rng).expect("non-empty list")
    }

    fn fill(&mut self, template: &str, slots: &[(&str, &str)]) -> String {
        let mut s = template.to_string();
        for (name, value) in slots {
            s = s.replace(&format!("{{{name}}}"), value);
        }
        for (name, values) in &self.lex.fillers {
            let key = format!("{{{name}}}");
            if s.contains(&key) {
                let v = values.choose(&mut self.rng).expect("non-empty filler");
                s = s.replace(&key, v);
            }
        }
        s
    }

    /// (sentence, trigger) from explicit template/frame/keyword/role indices.
    fn labeled(&mut self, sub: SubDomain, t: usize, f: usize, keyword: &str, who: &str) -> (String, String) {
        let template = match sub {
            SubDomain::Jd => &self.lex.jd_templates[t],
            SubDomain::Njd => &self.lex.njd_templates[t],
        };
        let trigger = self.lex.frames[f].replace("{k}", keyword);
        let s = self.fill(template, &[("trigger", &trigger), ("k", keyword), ("role", who), ("member", who)]);
        (capitalize(&s), trigger)
    }

    fn random_labeled(&mut self, label: Label) -> (SubDomain, String, String) {
        let lex = self.lex;
        let sub = if self.rng.gen::<f64>() < self.jd_share { SubDomain::Jd } else { SubDomain::Njd };
        let (templates, who) = match sub {
            SubDomain::Jd => (&lex.jd_templates, &lex.roles),
            SubDomain::Njd => (&lex.njd_templates, &lex.members),
        };
        let t = self.rng.gen_range(0..templates.len());
        let f = self.rng.gen_range(0..lex.frames.len());
        let k = self.pick(lex.keywords_of(label)).to_string();
        let w = self.pick(who).to_string();
        let (s, trig) = self.labeled(sub, t, f, &k, &w);
        (sub, s, trig)
    }

    fn general(&mut self) -> String {
        let lex = self.lex;
        if self.rng.gen::<f64>() < 0.2 {
            return self.pick(&lex.neutral).to_string();
        }
        let label = Label::ALL[self.rng.gen_range(0..Label::COUNT)];
        let ctx = self.pick(&lex.contexts[&label]).to_string();
        let k = self.pick(lex.keywords_of(label)).to_string();
        let k2 = self.pick(lex.keywords_of(label)).to_string();
        capitalize(&self.fill(&ctx, &[("k", &k), ("k2", &k2)]))
    }

    fn domain(&mut self) -> String {
        let label = Label::ALL[self.rng.gen_range(0..Label::COUNT)];
        let lex = self.lex;
        let t = self.rng.gen_range(0..lex.jd_templates.len());
        let f = self.rng.gen_range(0..lex.frames.len());
        let k = self.pick(lex.keywords_of(label)).to_string();
        let w = self.pick(&lex.roles).to_string();
        self.labeled(SubDomain::Jd, t, f, &k, &w).0
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(first) => first.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Deterministic labeled corpus plus general and domain unlabeled corpora.
///
/// The first sentence of each class uses the first template, frame, keyword
/// and role, so the AGE anchor reads "We are a young organisation looking for
/// young and talented marketers." Later sentences are drawn at random, with
/// up to 20 redraws to avoid duplicate texts. The labeled list is shuffled.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus, CorpusError> {
    spec.validate()?;
    let lex = &spec.lexicon;
    let mut g = Gen { lex, jd_share: spec.jd_share, rng: ChaCha8Rng::seed_from_u64(spec.seed) };
    let mut rows: Vec<(LabeledSentence, String)> = Vec::with_capacity(spec.size);
    let mut seen = HashSet::new();
    for (label, count) in spec.class_counts() {
        for i in 0..count {
            let (sub, text, trigger) = if i == 0 {
                let (s, t) = g.labeled(SubDomain::Jd, 0, 0, &lex.keywords_of(label)[0], &lex.roles[0]);
                (SubDomain::Jd, s, t)
            } else {
                let mut draw = g.random_labeled(label);
                for _ in 0..20 {
                    if !seen.contains(&draw.1) {
                        break;
                    }
                    draw = g.random_labeled(label);
                }
                draw
            };
            seen.insert(text.clone());
            rows.push((LabeledSentence { text, label, sub_domain: sub, source_id: String::new() }, trigger));
        }
    }
    rows.shuffle(&mut g.rng);
    let (mut labeled, triggers): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    for (i, s) in labeled.iter_mut().enumerate() {
        s.source_id = format!("syn-{i:06}");
    }
    let general = (0..spec.general_sentences).map(|_| g.general()).collect();
    let domain = (0..spec.domain_sentences).map(|_| g.domain()).collect();
    Ok(SyntheticCorpus { labeled, triggers, general, domain })
}
