//! Clinical reference data shared by the grammar generator and the
//! consistency rules: conditions, drug classes and blood-pressure bands.
//!
//! This is fixture data for exercising the pipeline, not clinical guidance.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::OnceLock;

use crate::text::tokenize;

/// Mean physiologic profile a condition shifts vitals and labs towards.
#[derive(Debug, Clone, Copy)]
pub struct Profile {
    pub systolic: f64,
    pub diastolic: f64,
    pub heart_rate: f64,
    pub respiratory_rate: f64,
    pub temperature: f64,
    pub spo2: f64,
    pub potassium: f64,
    pub sodium: f64,
    pub glucose: f64,
    pub creatinine: f64,
    pub hemoglobin: f64,
    pub wbc: f64,
}

pub const BASELINE: Profile = Profile {
    systolic: 122.0,
    diastolic: 78.0,
    heart_rate: 76.0,
    respiratory_rate: 16.0,
    temperature: 36.8,
    spo2: 98.0,
    potassium: 4.2,
    sodium: 139.0,
    glucose: 98.0,
    creatinine: 0.9,
    hemoglobin: 13.8,
    wbc: 7.2,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgeFit {
    Any,
    AdultOnly,
    PediatricOnly,
}

#[derive(Debug)]
pub struct Condition {
    pub name: &'static str,
    pub icd10: &'static str,
    pub complaint: &'static str,
    pub department: &'static str,
    pub age_fit: AgeFit,
    /// Words a matching treatment plan is expected to mention.
    pub topics: &'static [&'static str],
    pub plans: &'static [&'static str],
    pub drugs: &'static [&'static str],
    pub admission_reasons: &'static [&'static str],
    pub profile: Profile,
}

macro_rules! profile {
    ($($field:ident : $v:expr),* $(,)?) => {
        Profile { $($field: $v,)* ..BASELINE }
    };
}

pub static CONDITIONS: &[Condition] = &[
    Condition {
        name: "essential hypertension",
        icd10: "I10",
        complaint: "persistent headache with high blood pressure readings at home",
        department: "Cardiology",
        age_fit: AgeFit::AdultOnly,
        topics: &["blood pressure", "antihypertensive", "hypertension"],
        plans: &[
            "start antihypertensive therapy and recheck blood pressure in two weeks for hypertension control",
            "reduce dietary sodium and titrate antihypertensive medication to a blood pressure goal below 130/80",
        ],
        drugs: &["lisinopril", "amlodipine", "hydrochlorothiazide", "losartan"],
        admission_reasons: &["admitted for severely elevated blood pressure with headache"],
        profile: profile!(systolic: 152.0, diastolic: 94.0),
    },
    Condition {
        name: "type 2 diabetes mellitus",
        icd10: "E11.9",
        complaint: "increased thirst and frequent urination",
        department: "Endocrinology",
        age_fit: AgeFit::AdultOnly,
        topics: &["glucose", "glycemic", "diabetes"],
        plans: &[
            "begin oral therapy for diabetes with home glucose monitoring and diet counseling",
            "intensify glycemic control for diabetes and repeat hemoglobin a1c in three months",
        ],
        drugs: &["metformin", "glipizide", "insulin glargine", "sitagliptin"],
        admission_reasons: &["admitted for very high blood glucose with dehydration"],
        profile: profile!(glucose: 228.0, systolic: 132.0, diastolic: 82.0),
    },
    Condition {
        name: "community acquired pneumonia",
        icd10: "J18.9",
        complaint: "productive cough with fever and chills",
        department: "Pulmonology",
        age_fit: AgeFit::Any,
        topics: &["antibiotic", "pneumonia", "chest"],
        plans: &[
            "start empiric antibiotic therapy for pneumonia with chest imaging follow up",
            "treat pneumonia with a course of antibiotic therapy and supplemental oxygen as needed",
        ],
        drugs: &["azithromycin", "ceftriaxone", "amoxicillin", "doxycycline", "levofloxacin"],
        admission_reasons: &["admitted for pneumonia with fever and low oxygen saturation"],
        profile: profile!(temperature: 38.7, heart_rate: 104.0, respiratory_rate: 24.0, spo2: 92.0, wbc: 15.5),
    },
    Condition {
        name: "asthma exacerbation",
        icd10: "J45.901",
        complaint: "wheezing and shortness of breath",
        department: "Pulmonology",
        age_fit: AgeFit::Any,
        topics: &["inhaler", "bronchodilator", "asthma"],
        plans: &[
            "use a rescue inhaler for asthma symptoms and add an inhaled controller",
            "treat the asthma exacerbation with bronchodilator nebulizers and a short steroid course",
        ],
        drugs: &["albuterol", "prednisone", "budesonide", "montelukast"],
        admission_reasons: &["admitted for asthma exacerbation not responding to home inhaler"],
        profile: profile!(respiratory_rate: 25.0, spo2: 93.0, heart_rate: 102.0),
    },
    Condition {
        name: "urinary tract infection",
        icd10: "N39.0",
        complaint: "painful urination with lower abdominal discomfort",
        department: "Internal Medicine",
        age_fit: AgeFit::Any,
        topics: &["antibiotic", "urine", "urinary"],
        plans: &[
            "treat the urinary tract infection with oral antibiotic therapy and urine culture follow up",
            "complete a short antibiotic course for urinary infection and increase fluid intake",
        ],
        drugs: &["nitrofurantoin", "sulfamethoxazole-trimethoprim", "cephalexin", "ciprofloxacin"],
        admission_reasons: &["admitted for urinary tract infection with fever and flank pain"],
        profile: profile!(temperature: 37.9, wbc: 12.4, heart_rate: 92.0),
    },
    Condition {
        name: "congestive heart failure",
        icd10: "I50.9",
        complaint: "progressive leg swelling and breathlessness on exertion",
        department: "Cardiology",
        age_fit: AgeFit::AdultOnly,
        topics: &["diuretic", "heart failure", "fluid"],
        plans: &[
            "start diuretic therapy for heart failure with daily weights and fluid restriction",
            "optimize heart failure medications and limit dietary sodium and fluid intake",
        ],
        drugs: &["furosemide", "metoprolol", "lisinopril", "spironolactone"],
        admission_reasons: &["admitted for heart failure with fluid overload and breathlessness"],
        profile: profile!(systolic: 138.0, diastolic: 86.0, heart_rate: 96.0, spo2: 93.0, respiratory_rate: 22.0, sodium: 134.0),
    },
    Condition {
        name: "chronic obstructive pulmonary disease exacerbation",
        icd10: "J44.1",
        complaint: "worsening chronic cough and breathlessness",
        department: "Pulmonology",
        age_fit: AgeFit::AdultOnly,
        topics: &["bronchodilator", "inhaler", "pulmonary"],
        plans: &[
            "treat the pulmonary disease exacerbation with bronchodilator therapy and a steroid taper",
            "resume maintenance inhaler therapy for chronic pulmonary disease and refer to pulmonary rehabilitation",
        ],
        drugs: &["tiotropium", "albuterol", "prednisone", "azithromycin"],
        admission_reasons: &["admitted for chronic obstructive pulmonary disease exacerbation with hypoxia"],
        profile: profile!(spo2: 89.5, respiratory_rate: 24.0, heart_rate: 98.0),
    },
    Condition {
        name: "cellulitis of the lower leg",
        icd10: "L03.90",
        complaint: "red painful swelling of the lower leg",
        department: "Internal Medicine",
        age_fit: AgeFit::Any,
        topics: &["antibiotic", "wound", "cellulitis"],
        plans: &[
            "start oral antibiotic therapy for cellulitis and elevate the leg with wound checks",
            "mark the cellulitis borders and give antibiotic therapy with reassessment in two days",
        ],
        drugs: &["cephalexin", "dicloxacillin", "clindamycin", "sulfamethoxazole-trimethoprim"],
        admission_reasons: &["admitted for spreading cellulitis requiring intravenous antibiotics"],
        profile: profile!(temperature: 37.8, wbc: 12.8),
    },
    Condition {
        name: "osteoarthritis of the knee",
        icd10: "M17.9",
        complaint: "chronic knee pain and stiffness",
        department: "Orthopedics",
        age_fit: AgeFit::AdultOnly,
        topics: &["pain", "physical therapy", "joint"],
        plans: &[
            "manage knee pain with physical therapy and anti-inflammatory medication",
            "offer joint injection and continue physical therapy for knee osteoarthritis pain",
        ],
        drugs: &["ibuprofen", "naproxen", "acetaminophen", "celecoxib"],
        admission_reasons: &["admitted for elective knee replacement for osteoarthritis"],
        profile: profile!(systolic: 128.0),
    },
    Condition {
        name: "acute appendicitis",
        icd10: "K35.80",
        complaint: "sharp right lower abdominal pain",
        department: "General Surgery",
        age_fit: AgeFit::Any,
        topics: &["surgical", "appendectomy", "surgery"],
        plans: &[
            "proceed to laparoscopic appendectomy with perioperative antibiotics and surgical follow up",
            "keep nil by mouth and schedule surgery for appendectomy today",
        ],
        drugs: &["ceftriaxone", "metronidazole", "piperacillin", "morphine"],
        admission_reasons: &["admitted for acute appendicitis requiring surgery"],
        profile: profile!(temperature: 38.1, wbc: 14.6, heart_rate: 98.0),
    },
    Condition {
        name: "major depressive disorder",
        icd10: "F32.9",
        complaint: "low mood and poor sleep for several weeks",
        department: "Psychiatry",
        age_fit: AgeFit::AdultOnly,
        topics: &["counseling", "antidepressant", "mood"],
        plans: &[
            "start an antidepressant and arrange weekly counseling sessions for mood symptoms",
            "continue counseling and review antidepressant response for mood in four weeks",
        ],
        drugs: &["sertraline", "fluoxetine", "escitalopram", "bupropion"],
        admission_reasons: &["admitted for severe depressive episode with safety concerns"],
        profile: profile!(),
    },
    Condition {
        name: "migraine without aura",
        icd10: "G43.909",
        complaint: "recurrent throbbing headache with light sensitivity",
        department: "Neurology",
        age_fit: AgeFit::Any,
        topics: &["headache", "migraine", "triptan"],
        plans: &[
            "use a triptan at migraine onset and keep a headache diary",
            "start migraine prevention and limit analgesic use for headache days",
        ],
        drugs: &["sumatriptan", "naproxen", "ibuprofen", "propranolol"],
        admission_reasons: &["admitted for intractable migraine headache with vomiting"],
        profile: profile!(),
    },
    Condition {
        name: "acute gastroenteritis",
        icd10: "A09",
        complaint: "vomiting and watery diarrhea",
        department: "Internal Medicine",
        age_fit: AgeFit::Any,
        topics: &["hydration", "fluids", "gastroenteritis"],
        plans: &[
            "encourage oral hydration with electrolyte fluids and a bland diet for gastroenteritis",
            "give intravenous fluids for dehydration from gastroenteritis and advance diet as tolerated",
        ],
        drugs: &["ondansetron", "loperamide", "acetaminophen"],
        admission_reasons: &["admitted for dehydration from gastroenteritis"],
        profile: profile!(heart_rate: 104.0, potassium: 3.4, sodium: 134.0, temperature: 37.6),
    },
    Condition {
        name: "atrial fibrillation",
        icd10: "I48.91",
        complaint: "palpitations and irregular heartbeat",
        department: "Cardiology",
        age_fit: AgeFit::AdultOnly,
        topics: &["anticoagulation", "rate control", "rhythm"],
        plans: &[
            "start rate control and anticoagulation for atrial fibrillation with rhythm monitoring",
            "continue anticoagulation and adjust rate control medication for atrial fibrillation",
        ],
        drugs: &["apixaban", "metoprolol", "diltiazem", "warfarin"],
        admission_reasons: &["admitted for atrial fibrillation with rapid ventricular rate"],
        profile: profile!(heart_rate: 124.0, systolic: 128.0),
    },
    Condition {
        name: "chronic kidney disease stage 3",
        icd10: "N18.3",
        complaint: "fatigue with swelling and reduced urine output",
        department: "Nephrology",
        age_fit: AgeFit::AdultOnly,
        topics: &["renal", "kidney", "creatinine"],
        plans: &[
            "monitor kidney function and creatinine every three months with renal diet counseling",
            "adjust medications for renal function and refer to kidney specialist clinic",
        ],
        drugs: &["furosemide", "calcitriol", "lisinopril"],
        admission_reasons: &["admitted for worsening kidney function with high potassium"],
        profile: profile!(creatinine: 2.3, potassium: 5.1, hemoglobin: 11.2, systolic: 138.0, diastolic: 84.0),
    },
    Condition {
        name: "acute otitis media",
        icd10: "H66.90",
        complaint: "ear pain with fever",
        department: "Pediatrics",
        age_fit: AgeFit::PediatricOnly,
        topics: &["antibiotic", "ear", "otitis"],
        plans: &[
            "start oral antibiotic therapy for the ear infection with fever control",
            "watchful waiting for otitis with ear pain control and antibiotic if no improvement",
        ],
        drugs: &["amoxicillin", "azithromycin", "cefdinir", "ibuprofen"],
        admission_reasons: &["admitted for ear infection with high fever and poor feeding"],
        profile: profile!(temperature: 38.4, heart_rate: 112.0, wbc: 11.8),
    },
];

pub const CHRONIC_CONDITIONS: &[&str] = &[
    "hypertension",
    "type 2 diabetes",
    "asthma",
    "chronic obstructive pulmonary disease",
    "heart failure",
    "osteoarthritis",
    "chronic kidney disease",
    "depression",
    "atrial fibrillation",
    "hypothyroidism",
    "hyperlipidemia",
];

pub const PAST_SURGERIES: &[&str] = &[
    "appendectomy",
    "cholecystectomy",
    "tonsillectomy",
    "knee arthroscopy",
    "cesarean section",
    "hernia repair",
    "cataract surgery",
    "coronary artery bypass",
    "hip replacement",
];

pub const FAMILY_HISTORY: &[&str] = &[
    "hypertension",
    "type 2 diabetes",
    "coronary artery disease",
    "breast cancer",
    "colon cancer",
    "stroke",
    "asthma",
    "depression",
];

pub const DRUG_ALLERGENS: &[&str] = &["penicillin", "sulfa drugs", "aspirin", "codeine", "cephalosporins", "erythromycin"];
pub const OTHER_ALLERGENS: &[&str] = &["peanuts", "shellfish", "latex", "pollen", "dust mites", "bee stings", "eggs"];
pub const REACTIONS: &[&str] = &["hives", "rash", "swelling", "anaphylaxis", "itching", "wheezing", "nausea"];

pub const VACCINES: &[&str] = &[
    "influenza",
    "tetanus diphtheria pertussis",
    "hepatitis b",
    "measles mumps rubella",
    "pneumococcal conjugate",
    "covid-19 mrna",
    "varicella",
    "human papillomavirus",
];

pub const DEPARTMENTS: &[&str] = &[
    "Internal Medicine",
    "Cardiology",
    "Pulmonology",
    "Endocrinology",
    "General Surgery",
    "Orthopedics",
    "Pediatrics",
    "Neurology",
    "Psychiatry",
    "Nephrology",
    "Emergency Medicine",
];

pub const FEMALE_NAMES: &[&str] = &[
    "Amara", "Sofia", "Mei", "Priya", "Fatima", "Olivia", "Lucia", "Aiyana", "Keiko", "Nia",
    "Elena", "Grace", "Leilani", "Yasmin", "Ana", "Chloe",
];
pub const MALE_NAMES: &[&str] = &[
    "Kwame", "Mateo", "Wei", "Arjun", "Omar", "Liam", "Diego", "Takoda", "Hiroshi", "Malik",
    "Ivan", "Samuel", "Kai", "Tariq", "Jose", "Ethan",
];
pub const NEUTRAL_NAMES: &[&str] = &["Alex", "Jordan", "Riley", "Sam", "Rowan", "Avery", "Quinn", "Sasha"];
pub const LAST_NAMES: &[&str] = &[
    "Okafor", "Garcia", "Chen", "Patel", "Haddad", "Smith", "Hernandez", "Begay", "Tanaka",
    "Johnson", "Kowalski", "Nguyen", "Kealoha", "Rahman", "Silva", "Brown", "O'Brien", "Kim",
    "Mensah", "Rossi",
];

/// (state, cities)
pub const GEOGRAPHY: &[(&str, &[&str])] = &[
    ("Missouri", &["Columbia", "St. Louis", "Kansas City"]),
    ("California", &["Los Angeles", "Fresno", "San Diego"]),
    ("Texas", &["Houston", "El Paso", "Austin"]),
    ("New York", &["New York", "Buffalo", "Albany"]),
    ("Arizona", &["Phoenix", "Tucson", "Flagstaff"]),
    ("Hawaii", &["Honolulu", "Hilo"]),
    ("Georgia", &["Atlanta", "Savannah"]),
    ("Washington", &["Seattle", "Spokane"]),
];

pub const INSURERS: &[&str] = &["Medicare", "Medicaid", "Blue Cross", "Aetna", "UnitedHealthcare", "Cigna", "self-pay"];

pub const SPECIALTIES: &[(&str, &str)] = &[
    ("Internal Medicine", "internal medicine"),
    ("Cardiology", "cardiology"),
    ("Pulmonology", "pulmonology"),
    ("Endocrinology", "endocrinology"),
    ("General Surgery", "general surgery"),
    ("Orthopedics", "orthopedic surgery"),
    ("Pediatrics", "pediatrics"),
    ("Neurology", "neurology"),
    ("Psychiatry", "psychiatry"),
    ("Nephrology", "nephrology"),
    ("Emergency Medicine", "emergency medicine"),
];

pub fn condition_by_name(name: &str) -> Option<&'static Condition> {
    let lower = name.trim().to_lowercase();
    CONDITIONS.iter().find(|c| c.name == lower)
}

pub fn condition_by_complaint(complaint: &str) -> Option<&'static Condition> {
    let lower = complaint.trim().to_lowercase();
    CONDITIONS.iter().find(|c| c.complaint == lower)
}

/// Resolves free text (a diagnosis description or ICD-10 code) to a catalog condition.
pub fn resolve_condition(text: &str) -> Option<&'static Condition> {
    let lower = text.trim().to_lowercase();
    CONDITIONS
        .iter()
        .find(|c| c.icd10.to_lowercase() == lower || c.name == lower)
        .or_else(|| CONDITIONS.iter().find(|c| lower.contains(c.name)))
}

/// Drug name (lowercase) to pharmacological class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrugClassMap {
    classes: BTreeMap<String, String>,
}

const DRUG_CLASS_FIXTURE: &str = include_str!("../data/drug_classes.csv");

/// Allergy wording that names a class rather than a drug.
const CLASS_ALIASES: &[(&str, &str)] = &[
    ("sulfa", "sulfonamides"),
    ("sulfa drugs", "sulfonamides"),
    ("nsaid", "nsaids"),
    ("penicillins", "penicillins"),
    ("cephalosporin", "cephalosporins"),
    ("macrolide", "macrolides"),
];

#[derive(Debug, Deserialize)]
struct DrugClassRow {
    drug: String,
    class: String,
}

impl DrugClassMap {
    pub fn from_csv(text: &str) -> Result<Self, csv::Error> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let mut classes = BTreeMap::new();
        for row in reader.deserialize::<DrugClassRow>() {
            let row = row?;
            classes.insert(row.drug.trim().to_lowercase(), row.class.trim().to_lowercase());
        }
        Ok(Self { classes })
    }

    /// The shipped fixture.
    pub fn builtin() -> &'static DrugClassMap {
        static MAP: OnceLock<DrugClassMap> = OnceLock::new();
        MAP.get_or_init(|| DrugClassMap::from_csv(DRUG_CLASS_FIXTURE).expect("valid drug class fixture"))
    }

    pub fn class_of_drug(&self, drug: &str) -> Option<&str> {
        self.classes.get(&drug.trim().to_lowercase()).map(String::as_str)
    }

    /// Class named by an allergy entry: a drug, a class name, or an alias.
    pub fn class_of_allergen(&self, allergen: &str) -> Option<&str> {
        let key = allergen.trim().to_lowercase();
        if let Some(c) = self.classes.get(&key) {
            return Some(c);
        }
        if let Some(c) = self.classes.values().find(|c| **c == key) {
            return Some(c);
        }
        CLASS_ALIASES
            .iter()
            .find(|(alias, _)| *alias == key)
            .and_then(|(_, class)| self.classes.values().find(|c| c == class))
            .map(String::as_str)
    }

    pub fn drugs_in_class<'a>(&'a self, class: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.classes
            .iter()
            .filter(move |(_, c)| c.as_str() == class)
            .map(|(d, _)| d.as_str())
    }

    pub fn classes(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.classes.values().map(String::as_str).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn drugs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.classes.iter().map(|(d, c)| (d.as_str(), c.as_str()))
    }
}

/// One blood-pressure band: matched when systolic or diastolic reaches its floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityBand {
    pub label: String,
    pub systolic_at_least: Option<f64>,
    pub diastolic_at_least: Option<f64>,
}

/// Blood-pressure severity classification table. Bands are checked in order
/// after the hypotension test; the first match wins, otherwise `default_label`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityBands {
    pub hypotension_systolic_below: f64,
    pub hypotension_diastolic_below: f64,
    pub hypotension_label: String,
    pub bands: Vec<SeverityBand>,
    pub default_label: String,
}

impl Default for SeverityBands {
    fn default() -> Self {
        let band = |label: &str, s: Option<f64>, d: Option<f64>| SeverityBand {
            label: label.to_string(),
            systolic_at_least: s,
            diastolic_at_least: d,
        };
        Self {
            hypotension_systolic_below: 90.0,
            hypotension_diastolic_below: 60.0,
            hypotension_label: "hypotension".into(),
            bands: vec![
                band("hypertensive_crisis", Some(180.0), Some(120.0)),
                band("stage_2_hypertension", Some(140.0), Some(90.0)),
                band("stage_1_hypertension", Some(130.0), Some(80.0)),
                band("elevated", Some(120.0), None),
            ],
            default_label: "normal".into(),
        }
    }
}

impl SeverityBands {
    pub fn classify(&self, systolic: f64, diastolic: f64) -> &str {
        if systolic < self.hypotension_systolic_below || diastolic < self.hypotension_diastolic_below {
            return &self.hypotension_label;
        }
        self.bands
            .iter()
            .find(|b| {
                b.systolic_at_least.is_some_and(|s| systolic >= s)
                    || b.diastolic_at_least.is_some_and(|d| diastolic >= d)
            })
            .map(|b| b.label.as_str())
            .unwrap_or(&self.default_label)
    }
}

/// Reference corpus of clinical narratives for training the built-in
/// language model. One sentence per line.
pub const REFERENCE_CORPUS: &str = include_str!("../data/reference_corpus.txt");

pub fn reference_corpus() -> Vec<&'static str> {
    REFERENCE_CORPUS.lines().filter(|l| !l.trim().is_empty()).collect()
}

/// True when `text` mentions any of the condition's treatment topics.
pub fn mentions_topic(condition: &Condition, text: &str) -> bool {
    let lower = text.to_lowercase();
    let tokens = tokenize(&lower);
    condition.topics.iter().any(|topic| {
        let topic_tokens = tokenize(topic);
        tokens
            .windows(topic_tokens.len().max(1))
            .any(|w| w == topic_tokens.as_slice())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drug_map_has_the_documented_classes() {
        let map = DrugClassMap::builtin();
        assert!(map.drugs().count() >= 40);
        let pens: Vec<&str> = map.drugs_in_class("penicillins").collect();
        for d in ["penicillin", "amoxicillin", "ampicillin", "piperacillin"] {
            assert!(pens.contains(&d));
        }
        for class in ["macrolides", "cephalosporins", "nsaids", "sulfonamides"] {
            assert!(map.drugs_in_class(class).count() >= 3, "{class}");
        }
    }

    #[test]
    fn allergen_resolution() {
        let map = DrugClassMap::builtin();
        assert_eq!(map.class_of_allergen("Penicillin"), Some("penicillins"));
        assert_eq!(map.class_of_allergen("sulfa drugs"), Some("sulfonamides"));
        assert_eq!(map.class_of_allergen("cephalosporins"), Some("cephalosporins"));
        assert_eq!(map.class_of_allergen("peanuts"), None);
    }

    #[test]
    fn every_catalog_drug_is_classified() {
        let map = DrugClassMap::builtin();
        for c in CONDITIONS {
            for d in c.drugs {
                assert!(map.class_of_drug(d).is_some(), "{d}");
            }
        }
        for a in DRUG_ALLERGENS.iter().filter(|a| **a != "codeine") {
            assert!(map.class_of_allergen(a).is_some(), "{a}");
        }
    }

    #[test]
    fn severity_bands() {
        let b = SeverityBands::default();
        assert_eq!(b.classify(185.0, 100.0), "hypertensive_crisis");
        assert_eq!(b.classify(150.0, 85.0), "stage_2_hypertension");
        assert_eq!(b.classify(132.0, 70.0), "stage_1_hypertension");
        assert_eq!(b.classify(124.0, 70.0), "elevated");
        assert_eq!(b.classify(112.0, 72.0), "normal");
        assert_eq!(b.classify(85.0, 55.0), "hypotension");
        assert_eq!(b.classify(120.0, 0.0), "hypotension");
    }

    #[test]
    fn conditions_are_unique_and_plans_mention_topics() {
        for (i, a) in CONDITIONS.iter().enumerate() {
            for b in &CONDITIONS[i + 1..] {
                assert_ne!(a.name, b.name);
                assert_ne!(a.complaint, b.complaint);
                assert_ne!(a.icd10, b.icd10);
            }
            for p in a.plans {
                assert!(mentions_topic(a, p), "{p}");
            }
            assert!(!a.drugs.is_empty());
        }
    }

    #[test]
    fn resolve_by_code_or_name() {
        assert_eq!(resolve_condition("I10").unwrap().name, "essential hypertension");
        assert_eq!(
            resolve_condition("Acute Appendicitis").unwrap().icd10,
            "K35.80"
        );
        assert!(resolve_condition("broken arm").is_none());
    }
}
