//! Synthetic radiology reports.
//!
//! Two presets: venous duplex ultrasound reports with three classes (no
//! acute DVT, upper-extremity DVT, lower-extremity DVT) and chest CT
//! angiography reports with two (no PE, PE). Each document carries exactly
//! one class-evidence sentence; the rest is section boilerplate, neutral
//! findings and negated mentions ("no evidence of thrombus in ...") that
//! occur in every class.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::text::corpus::{Corpus, Document};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Dvt,
    Pe,
}

impl Preset {
    pub fn class_names(self) -> Vec<String> {
        let names: &[&str] = match self {
            Preset::Dvt => &["no_acute_dvt", "upper_extremity_dvt", "lower_extremity_dvt"],
            Preset::Pe => &["no_pe", "pe"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }
}

/// Document lengths in words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LengthSpec {
    pub min_words: usize,
    pub mean_words: usize,
    /// Hard cap for ordinary documents.
    pub max_words: usize,
    /// Fraction of documents drawn from the long tail.
    pub tail_frac: f64,
    pub tail_min_words: usize,
    pub tail_max_words: usize,
}

/// Where the class-evidence sentence goes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvidenceSpec {
    /// Fraction of positive documents (every class but 0) whose evidence
    /// starts after `offset_words`; the others have it within the first
    /// 100 words.
    pub late_frac: f64,
    pub offset_words: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub preset: Preset,
    pub n_docs: usize,
    pub class_probs: Vec<f64>,
    pub length: LengthSpec,
    pub evidence: EvidenceSpec,
    pub seed: u64,
}

/// Last word index at which early evidence may start; the sentence then
/// ends well inside the first 100 words.
const EARLY_START_LIMIT: usize = 60;
/// Late evidence starts in `[offset, offset + LATE_WINDOW)`.
const LATE_WINDOW: usize = 40;

impl GeneratorSpec {
    pub fn dvt() -> Self {
        Self {
            preset: Preset::Dvt,
            n_docs: 1000,
            class_probs: vec![0.78, 0.11, 0.11],
            length: LengthSpec {
                min_words: 70,
                mean_words: 115,
                max_words: 165,
                tail_frac: 0.0,
                tail_min_words: 610,
                tail_max_words: 760,
            },
            evidence: EvidenceSpec {
                late_frac: 0.0,
                offset_words: 500,
            },
            seed: 0,
        }
    }

    pub fn pe() -> Self {
        Self {
            preset: Preset::Pe,
            n_docs: 900,
            class_probs: vec![0.88, 0.12],
            length: LengthSpec {
                min_words: 150,
                mean_words: 200,
                max_words: 300,
                tail_frac: 0.1,
                tail_min_words: 610,
                tail_max_words: 760,
            },
            evidence: EvidenceSpec {
                late_frac: 0.3,
                offset_words: 500,
            },
            seed: 0,
        }
    }

    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Dvt => Self::dvt(),
            Preset::Pe => Self::pe(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.class_probs.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        let k = self.preset.class_names().len();
        if self.class_probs.len() != k {
            return bad(format!("{} class probabilities for {k} classes", self.class_probs.len()));
        }
        if self.class_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("class probabilities must lie in [0, 1]".into());
        }
        let sum: f64 = self.class_probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return bad(format!("class probabilities sum to {sum}"));
        }
        if self.n_docs < k {
            return bad(format!("n_docs {} is below the class count {k}", self.n_docs));
        }
        let l = &self.length;
        if !(l.min_words <= l.mean_words && l.mean_words <= l.max_words) {
            return bad("need min_words ≤ mean_words ≤ max_words".into());
        }
        if l.tail_min_words > l.tail_max_words {
            return bad("need tail_min_words ≤ tail_max_words".into());
        }
        for (name, f) in [("tail_frac", l.tail_frac), ("late_frac", self.evidence.late_frac)] {
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("{name} must lie in [0, 1], got {f}"));
            }
        }
        if self.evidence.offset_words < 100 {
            return bad("evidence offset must be at least 100 words".into());
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `n` over `probs`; ties go to the
/// lower class index.
pub fn stratified_counts(n: usize, probs: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = probs.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| (e + 1e-9).floor() as usize).collect();
    let mut rest = n.saturating_sub(counts.iter().sum());
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - counts[a] as f64;
        let rb = exact[b] - counts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &c in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        counts[c] += 1;
        rest -= 1;
    }
    counts
}

/// Per-document generation facts, for checking placement contracts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DocTrace {
    /// Words before the evidence sentence.
    pub evidence_start: usize,
    pub evidence_words: usize,
    pub words: usize,
    pub late: bool,
    pub tail: bool,
}

struct Builder {
    lines: Vec<String>,
    words: usize,
    evidence: Option<(usize, usize)>,
}

impl Builder {
    fn new() -> Self {
        Self {
            lines: Vec::new(),
            words: 0,
            evidence: None,
        }
    }

    fn section(&mut self, header: &str) {
        self.lines.push(format!("{header}:"));
        self.words += 1;
    }

    fn sentence(&mut self, s: &str) {
        let line = self.lines.last_mut().expect("section first");
        line.push(' ');
        line.push_str(s);
        self.words += count(s);
    }

    fn evidence(&mut self, s: &str) {
        self.evidence = Some((self.words, count(s)));
        self.sentence(s);
    }

    fn text(&self) -> String {
        self.lines.join("\n")
    }
}

fn count(s: &str) -> usize {
    s.split_whitespace().count()
}

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).expect("non-empty bank")
}

const SIDES: &[&str] = &["left", "right"];
const SEXES: &[&str] = &["male", "female", "patient"];
const MONTHS: &[&str] = &[
    "January", "February", "March", "April", "May", "June", "July", "August", "September", "October", "November",
    "December",
];

fn age(rng: &mut ChaCha8Rng) -> String {
    format!("{}-year-old {}", rng.random_range(19..92), pick(rng, SEXES))
}

fn comparison(rng: &mut ChaCha8Rng, modality: &str) -> String {
    if rng.random_bool(0.5) {
        "None.".to_string()
    } else {
        format!(
            "Prior {modality} dated {} {}, {}.",
            pick(rng, MONTHS),
            rng.random_range(1..29),
            rng.random_range(2015..2024)
        )
    }
}

fn decimal(rng: &mut ChaCha8Rng, lo: u32, hi: u32) -> String {
    format!("{}.{}", rng.random_range(lo..hi), rng.random_range(0..10))
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Limb {
    Upper,
    Lower,
}

impl Limb {
    fn word(self) -> &'static str {
        match self {
            Limb::Upper => "upper",
            Limb::Lower => "lower",
        }
    }

    fn veins(self) -> &'static [&'static str] {
        match self {
            Limb::Upper => &["internal jugular", "subclavian", "axillary", "brachial", "basilic", "cephalic"],
            Limb::Lower => &[
                "common femoral",
                "femoral",
                "deep femoral",
                "popliteal",
                "posterior tibial",
                "peroneal",
            ],
        }
    }
}

fn dvt_filler(rng: &mut ChaCha8Rng, side: &str, limb: Limb) -> String {
    let vein = pick(rng, limb.veins());
    let other = if side == "left" { "right" } else { "left" };
    match rng.random_range(0..12) {
        0 => format!("The {side} {vein} vein is patent and fully compressible."),
        1 => format!("Normal color flow and phasic spectral Doppler waveforms are seen in the {side} {vein} vein."),
        2 => format!("No evidence of thrombus in the {side} {vein} vein."),
        3 => format!("The {side} {vein} vein demonstrates normal augmentation."),
        4 => "Superficial soft tissue edema is noted.".to_string(),
        5 => format!("There is no intraluminal echogenic material in the {vein} vein."),
        6 => format!("The contralateral {other} {vein} vein waveform is normal."),
        7 => format!("Visualization of the {vein} vein is limited by body habitus."),
        8 => format!("Small reactive lymph nodes measuring up to {} cm are present.", decimal(rng, 0, 2)),
        9 => format!("The {vein} vein measures {} mm in diameter.", rng.random_range(3..14)),
        10 => "Respiratory variation is preserved.".to_string(),
        _ => format!("No thrombus is demonstrated within the {side} {vein} vein."),
    }
}

fn dvt_evidence(rng: &mut ChaCha8Rng, label: usize, side: &str, limb: Limb) -> String {
    if label == 0 {
        let l = limb.word();
        return match rng.random_range(0..3) {
            0 => format!("No sonographic evidence of acute deep venous thrombosis in the {side} {l} extremity."),
            1 => format!("The deep veins of the {side} {l} extremity are patent without evidence of acute thrombosis."),
            _ => format!("Negative for acute deep vein thrombosis of the {side} {l} extremity."),
        };
    }
    let vein = pick(rng, limb.veins());
    match rng.random_range(0..4) {
        0 => format!("Occlusive thrombus is present within the {side} {vein} vein, compatible with acute deep venous thrombosis."),
        1 => format!("The {side} {vein} vein is distended and noncompressible with internal echogenic thrombus."),
        2 => format!("Nonocclusive acute thrombus is identified in the {side} {vein} vein."),
        _ => format!("Acute deep venous thrombosis is seen involving the {side} {vein} vein."),
    }
}

const LIMB_SYMPTOMS: &[&str] = &["swelling", "pain and swelling", "erythema and tenderness", "pain"];

const DVT_HISTORY: &[&str] = &[
    "recent surgery",
    "history of malignancy",
    "shortness of breath",
    "prolonged immobilization",
    "elevated D-dimer",
];

const DVT_IMPRESSIONS: &[&str] = &[
    "Clinical correlation is recommended.",
    "Results were communicated to the ordering provider.",
    "Follow-up imaging as clinically indicated.",
    "As above.",
];

const PE_ARTERIES: &[&str] = &[
    "right main",
    "left main",
    "right upper lobe",
    "right middle lobe",
    "right lower lobe",
    "left upper lobe",
    "left lower lobe",
    "lingular",
    "segmental",
    "subsegmental",
];

const LOBES: &[&str] = &[
    "right upper lobe",
    "right middle lobe",
    "right lower lobe",
    "left upper lobe",
    "left lower lobe",
    "lingula",
];

fn pe_filler(rng: &mut ChaCha8Rng) -> String {
    let lobe = pick(rng, LOBES);
    let artery = pick(rng, PE_ARTERIES);
    let side = pick(rng, SIDES);
    match rng.random_range(0..22) {
        0 => format!("No filling defect is seen in the {artery} pulmonary arteries."),
        1 => format!("The main pulmonary artery measures {} cm in diameter.", decimal(rng, 2, 4)),
        2 => "The heart is normal in size.".to_string(),
        3 => "There is no pericardial effusion.".to_string(),
        4 => "The thoracic aorta is normal in caliber without dissection.".to_string(),
        5 => "Mild atherosclerotic calcification of the aortic arch is noted.".to_string(),
        6 => format!("There is {} dependent atelectasis in the {lobe}.", pick(rng, &["mild", "minimal", "moderate"])),
        7 => format!("A {} mm nodule is present in the {lobe}.", rng.random_range(2..9)),
        8 => "No pleural effusion or pneumothorax.".to_string(),
        9 => format!("Small {side} pleural effusion is present."),
        10 => "No mediastinal or hilar lymphadenopathy.".to_string(),
        11 => "The central airways are patent.".to_string(),
        12 => "Mild emphysematous changes are seen in the upper lobes.".to_string(),
        13 => "Limited images of the upper abdomen are unremarkable.".to_string(),
        14 => "Degenerative changes of the thoracic spine are present.".to_string(),
        15 => "The visualized thyroid gland is unremarkable.".to_string(),
        16 => format!("The right to left ventricular diameter ratio is {}.", decimal(rng, 0, 1)),
        17 => format!("Coronary artery calcifications are {}.", pick(rng, &["mild", "present", "absent"])),
        18 => format!("Linear scarring is noted in the {lobe}."),
        19 => format!("Contrast opacification of the {artery} pulmonary arteries is {}.", pick(rng, &["adequate", "good", "limited by motion"])),
        20 => format!("Ground glass opacity is seen in the {lobe}."),
        _ => "No acute osseous abnormality.".to_string(),
    }
}

fn pe_evidence(rng: &mut ChaCha8Rng, label: usize) -> String {
    if label == 0 {
        return pick(
            rng,
            &[
                "No evidence of pulmonary embolism.",
                "Negative for acute pulmonary embolism.",
                "No pulmonary embolism is identified.",
            ],
        )
        .to_string();
    }
    let artery = pick(rng, PE_ARTERIES);
    match rng.random_range(0..4) {
        0 => format!("There is an acute filling defect within the {artery} pulmonary artery consistent with pulmonary embolism."),
        1 => format!("Occlusive embolus is seen in the {artery} pulmonary artery."),
        2 => "Saddle embolus is present at the bifurcation of the main pulmonary artery.".to_string(),
        _ => format!("Acute pulmonary emboli are identified in the {artery} pulmonary arteries."),
    }
}

const PE_SYMPTOMS: &[&str] = &[
    "shortness of breath",
    "pleuritic chest pain",
    "tachycardia",
    "hypoxia",
    "elevated D-dimer",
    "syncope",
    "hemoptysis",
    "recent long flight",
];

const PE_IMPRESSIONS: &[&str] = &[
    "Findings were discussed with the ordering clinician.",
    "Recommend clinical correlation.",
    "No other acute intrathoracic abnormality.",
    "Follow-up chest CT may be considered for the pulmonary nodules.",
];

struct Plan {
    label: usize,
    late: bool,
    tail: bool,
    target: usize,
}

/// Appends filler sentences until `target` words (plus `reserve` for what
/// follows) are reached, never exceeding `cap`.
fn fill(b: &mut Builder, rng: &mut ChaCha8Rng, target: usize, reserve: usize, cap: usize, mut next: impl FnMut(&mut ChaCha8Rng) -> String) {
    let mut misses = 0;
    while b.words + reserve < target && misses < 20 {
        let s = next(rng);
        if b.words + count(&s) + reserve > cap {
            misses += 1;
            continue;
        }
        b.sentence(&s);
    }
}

/// Filler until the evidence can start in the placement window.
fn fill_before_evidence(
    b: &mut Builder,
    rng: &mut ChaCha8Rng,
    plan: &Plan,
    offset: usize,
    mut next: impl FnMut(&mut ChaCha8Rng) -> String,
) {
    if plan.late {
        let start = offset + rng.random_range(0..LATE_WINDOW / 2);
        while b.words < start {
            let s = next(rng);
            if b.words + count(&s) >= offset + LATE_WINDOW {
                continue;
            }
            b.sentence(&s);
        }
    } else {
        let extra = rng.random_range(0..3);
        for _ in 0..extra {
            let s = next(rng);
            if b.words + count(&s) <= EARLY_START_LIMIT {
                b.sentence(&s);
            }
        }
    }
}

fn dvt_document(spec: &GeneratorSpec, plan: &Plan, rng: &mut ChaCha8Rng) -> Builder {
    let side = pick(rng, SIDES);
    let limb = match plan.label {
        1 => Limb::Upper,
        2 => Limb::Lower,
        _ if rng.random_bool(0.5) => Limb::Upper,
        _ => Limb::Lower,
    };
    let l = limb.word();
    let mut b = Builder::new();
    b.section("EXAM");
    b.sentence(&format!("Venous duplex ultrasound of the {side} {l} extremity."));
    b.section("HISTORY");
    let who = capitalize(&age(rng));
    let symptom = pick(rng, LIMB_SYMPTOMS);
    if rng.random_bool(0.7) {
        b.sentence(&format!("{who} with {side} {l} extremity {symptom}."));
    } else {
        b.sentence(&format!("{who} with {} and {side} {l} extremity {symptom}.", pick(rng, DVT_HISTORY)));
    }
    b.section("COMPARISON");
    b.sentence(&comparison(rng, "ultrasound"));
    if rng.random_bool(0.5) {
        b.section("TECHNIQUE");
        b.sentence("Grayscale, color and spectral Doppler imaging of the deep veins was performed.");
    }
    b.section("FINDINGS");
    let evidence = dvt_evidence(rng, plan.label, side, limb);
    fill_before_evidence(&mut b, rng, plan, spec.evidence.offset_words, |r| dvt_filler(r, side, limb));
    b.evidence(&evidence);
    let impression = pick(rng, DVT_IMPRESSIONS);
    let cap = if plan.tail || plan.late { usize::MAX } else { spec.length.max_words };
    fill(&mut b, rng, plan.target, 1 + count(impression), cap, |r| dvt_filler(r, side, limb));
    b.section("IMPRESSION");
    b.sentence(impression);
    b
}

fn pe_document(spec: &GeneratorSpec, plan: &Plan, rng: &mut ChaCha8Rng) -> Builder {
    let mut b = Builder::new();
    b.section("EXAM");
    b.sentence(pick(
        rng,
        &[
            "CT angiography of the chest with intravenous contrast.",
            "CTA chest, pulmonary embolism protocol.",
            "CT pulmonary angiogram.",
        ],
    ));
    b.section("HISTORY");
    b.sentence(&format!("{} with {}.", capitalize(&age(rng)), pick(rng, PE_SYMPTOMS)));
    b.section("TECHNIQUE");
    b.sentence(&format!(
        "Axial images of the chest were obtained after {} mL of intravenous contrast.",
        rng.random_range(60..101)
    ));
    b.section("COMPARISON");
    b.sentence(&comparison(rng, "chest CT"));
    b.section("FINDINGS");
    let impression = pick(rng, PE_IMPRESSIONS);
    let cap = if plan.tail || plan.late { usize::MAX } else { spec.length.max_words };
    if plan.label == 0 {
        // The negative statement lives in the impression.
        let evidence = pe_evidence(rng, 0);
        let reserve = 1 + count(&evidence) + count(impression);
        fill(&mut b, rng, plan.target, reserve, cap, pe_filler);
        b.section("IMPRESSION");
        b.evidence(&evidence);
        b.sentence(impression);
    } else {
        let evidence = pe_evidence(rng, plan.label);
        fill_before_evidence(&mut b, rng, plan, spec.evidence.offset_words, pe_filler);
        b.evidence(&evidence);
        fill(&mut b, rng, plan.target, 1 + count(impression), cap, pe_filler);
        b.section("IMPRESSION");
        b.sentence(impression);
    }
    b
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn target_words(spec: &GeneratorSpec, tail: bool, late: bool, rng: &mut ChaCha8Rng) -> usize {
    let l = &spec.length;
    if tail || late {
        let lo = l.tail_min_words.max(spec.evidence.offset_words + LATE_WINDOW + 60);
        let hi = l.tail_max_words.max(lo);
        return rng.random_range(lo..=hi);
    }
    let sd = ((l.max_words - l.min_words) as f64 / 6.0).max(1.0);
    let x: f64 = Normal::new(l.mean_words as f64, sd).expect("finite sd").sample(rng);
    (x.round().max(0.0) as usize).clamp(l.min_words, l.max_words)
}

/// Corpus plus per-document traces.
pub fn generate_traced(spec: &GeneratorSpec) -> Result<(Corpus, Vec<DocTrace>)> {
    spec.validate()?;
    let n = spec.n_docs;
    let counts = stratified_counts(n, &spec.class_probs);
    let mut labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &k)| vec![c; k]).collect();
    labels.shuffle(&mut seed::rng_for(spec.seed, "labels"));

    let mut positives: Vec<usize> = (0..n).filter(|&i| labels[i] > 0).collect();
    positives.shuffle(&mut seed::rng_for(spec.seed, "evidence"));
    let n_late = (spec.evidence.late_frac * positives.len() as f64 + 1e-9).floor() as usize;
    let mut late = vec![false; n];
    for &i in &positives[..n_late] {
        late[i] = true;
    }

    // Late-evidence documents are long anyway, so they fill the tail first.
    let mut rest: Vec<usize> = (0..n).filter(|&i| !late[i]).collect();
    rest.shuffle(&mut seed::rng_for(spec.seed, "tail"));
    let n_tail = (spec.length.tail_frac * n as f64 - 1e-9).ceil().max(0.0) as usize;
    let mut tail = late.clone();
    for &i in rest.iter().take(n_tail.saturating_sub(n_late)) {
        tail[i] = true;
    }

    let prefix = match spec.preset {
        Preset::Dvt => "dvt",
        Preset::Pe => "pe",
    };
    let width = n.to_string().len().max(4);
    let mut documents = Vec::with_capacity(n);
    let mut traces = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = seed::rng_for(spec.seed, &format!("doc/{i}"));
        let target = target_words(spec, tail[i], late[i], &mut rng);
        let plan = Plan {
            label: labels[i],
            late: late[i],
            tail: tail[i],
            target,
        };
        let b = match spec.preset {
            Preset::Dvt => dvt_document(spec, &plan, &mut rng),
            Preset::Pe => pe_document(spec, &plan, &mut rng),
        };
        let (evidence_start, evidence_words) = b.evidence.expect("every document has evidence");
        traces.push(DocTrace {
            evidence_start,
            evidence_words,
            words: b.words,
            late: late[i],
            tail: tail[i],
        });
        documents.push(Document {
            id: format!("{prefix}-{i:0width$}"),
            label: labels[i],
            text: b.text(),
        });
    }
    let corpus = Corpus::new(documents, spec.preset.class_names(), Some(spec.clone()))?;
    Ok((corpus, traces))
}

pub fn generate(spec: &GeneratorSpec) -> Result<Corpus> {
    generate_traced(spec).map(|(c, _)| c)
}

pub fn generate_dvt_corpus(spec: &GeneratorSpec) -> Result<Corpus> {
    if spec.preset != Preset::Dvt {
        return Err(Error::InvalidSpec("expected the dvt preset".into()));
    }
    generate(spec)
}

pub fn generate_pe_corpus(spec: &GeneratorSpec) -> Result<Corpus> {
    if spec.preset != Preset::Pe {
        return Err(Error::InvalidSpec("expected the pe preset".into()));
    }
    generate(spec)
}
