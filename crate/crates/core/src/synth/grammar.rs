//! Weighted-choice content grammar behind [`super::GrammarBackend`].
//!
//! Each table has a production that reads the prompt context (the same
//! values an LLM would see) and emits `field -> text` pairs. A configurable
//! defect rate injects the error classes the validators are meant to catch:
//! hard-range vitals and labs, mislabelled blood-pressure severity,
//! allergy-class prescriptions, and mismatched diagnoses, plans and
//! discharge diagnoses.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::collections::BTreeMap;

use crate::catalog::{
    self, AgeFit, Condition, Profile, CHRONIC_CONDITIONS, CONDITIONS, DEPARTMENTS, DRUG_ALLERGENS,
    FAMILY_HISTORY, FEMALE_NAMES, INSURERS, LAST_NAMES, MALE_NAMES, NEUTRAL_NAMES, OTHER_ALLERGENS,
    PAST_SURGERIES, REACTIONS, SPECIALTIES, VACCINES,
};
use crate::catalog::{DrugClassMap, SeverityBands};
use crate::schema::{BLOOD_GROUPS, SEVERITY_CLASSES};

pub(crate) type Fields = Vec<(&'static str, String)>;
type Ctx = BTreeMap<String, String>;

pub(crate) struct Grammar<'a, R: Rng> {
    pub rng: &'a mut R,
    pub ctx: &'a Ctx,
    pub defect_rate: f64,
}

fn pick<'b, R: Rng, T>(rng: &mut R, items: &'b [T]) -> &'b T {
    items.choose(rng).expect("nonempty choice list")
}

fn gauss<R: Rng>(rng: &mut R, mean: f64, sd: f64) -> f64 {
    Normal::new(mean, sd).expect("finite sd").sample(rng)
}

fn round_to(x: f64, places: i32) -> f64 {
    let f = 10f64.powi(places);
    (x * f).round() / f
}

fn phone<R: Rng>(rng: &mut R) -> String {
    // 555-01xx numbers are reserved for fiction
    format!("{}-555-01{:02}", rng.gen_range(201..=989), rng.gen_range(0..100))
}

impl<R: Rng> Grammar<'_, R> {
    fn get(&self, key: &str) -> &str {
        self.ctx.get(key).map(String::as_str).unwrap_or("")
    }

    fn number(&self, key: &str) -> usize {
        self.get(key).parse().unwrap_or(1)
    }

    fn age(&self) -> u32 {
        self.get("age").parse().unwrap_or(40)
    }

    fn defect(&mut self) -> bool {
        self.defect_rate > 0.0 && self.rng.gen::<f64>() < self.defect_rate
    }

    fn fits(&self, c: &Condition) -> bool {
        let pediatric = self.age() < 18;
        match c.age_fit {
            AgeFit::Any => true,
            AgeFit::AdultOnly => !pediatric,
            AgeFit::PediatricOnly => pediatric,
        }
    }

    fn any_condition(&mut self) -> &'static Condition {
        let fitting: Vec<&'static Condition> = CONDITIONS.iter().filter(|c| self.fits(c)).collect();
        fitting.choose(self.rng).copied().unwrap_or(&CONDITIONS[0])
    }

    fn other_condition(&mut self, not: &Condition) -> &'static Condition {
        let others: Vec<&'static Condition> = CONDITIONS
            .iter()
            .filter(|c| c.name != not.name && self.fits(c))
            .collect();
        others.choose(self.rng).copied().unwrap_or(&CONDITIONS[0])
    }

    fn complaint_condition(&mut self) -> &'static Condition {
        match catalog::condition_by_complaint(self.get("chief_complaint")) {
            Some(c) => c,
            None => self.any_condition(),
        }
    }

    fn diagnosis_condition(&self) -> Option<&'static Condition> {
        catalog::resolve_condition(self.get("diagnosis"))
    }

    pub fn produce(&mut self, table: &str) -> Fields {
        match table {
            "departments" => self.department(),
            "staff" => self.staff(),
            "wards" => self.ward(),
            "beds" => self.bed(),
            "patient_details" => self.patient(),
            "emergency_contacts" => self.contact(),
            "immunizations" => self.immunization(),
            "allergies" => self.allergy(),
            "medical_histories" => self.history(),
            "appointments" => self.appointment(),
            "hospital_visits" => self.visit(),
            "vital_signs" => self.vitals(),
            "test_results" => self.labs(),
            "diagnoses" => self.diagnosis(),
            "admissions" => self.admission(),
            "treatment_plans" => self.plan(),
            "medications" => self.medication(),
            "clinical_notes" => self.note(),
            "visit_logs" => self.log(),
            "discharge_summaries" => self.discharge(),
            "referrals" => self.referral(),
            "billing" => self.bill(),
            _ => Vec::new(),
        }
    }

    fn department(&mut self) -> Fields {
        let n = self.number("department_number");
        let name = DEPARTMENTS[(n.max(1) - 1) % DEPARTMENTS.len()];
        vec![
            ("name", name.to_string()),
            ("floor", (1 + (n.max(1) - 1) / 2).to_string()),
            ("phone", phone(self.rng)),
        ]
    }

    fn staff(&mut self) -> Fields {
        let n = self.number("staff_number");
        let department = self.get("department").to_string();
        let surgical = matches!(department.as_str(), "General Surgery" | "Orthopedics");
        let role = match (n - 1) % 5 {
            0 | 2 => "physician",
            1 | 3 => "nurse",
            _ if surgical => "surgeon",
            _ if n.is_multiple_of(2) => "pharmacist",
            _ => "technician",
        };
        let dept_specialty = SPECIALTIES
            .iter()
            .find(|(d, _)| *d == department)
            .map(|(_, s)| *s)
            .unwrap_or("internal medicine");
        let specialty = match role {
            "physician" | "surgeon" => dept_specialty.to_string(),
            "nurse" => format!("{dept_specialty} nursing"),
            "pharmacist" => "clinical pharmacy".to_string(),
            _ => "laboratory technology".to_string(),
        };
        let first = if self.rng.gen_bool(0.5) {
            pick(self.rng, FEMALE_NAMES)
        } else {
            pick(self.rng, MALE_NAMES)
        };
        let year = self.rng.gen_range(2000..=2023);
        let month = self.rng.gen_range(1..=12);
        let day = self.rng.gen_range(1..=28);
        vec![
            ("first_name", first.to_string()),
            ("last_name", pick(self.rng, LAST_NAMES).to_string()),
            ("role", role.to_string()),
            ("specialty", specialty),
            ("phone", phone(self.rng)),
            ("hire_date", format!("{year:04}-{month:02}-{day:02}")),
        ]
    }

    fn ward(&mut self) -> Fields {
        let department = self.get("department").to_string();
        let n = self.number("ward_number");
        let ward_type = match department.as_str() {
            "Pediatrics" => "pediatric",
            "General Surgery" | "Orthopedics" => "surgical",
            "Emergency Medicine" | "Pulmonology" if n % 2 == 1 => "intensive_care",
            _ => "general",
        };
        vec![
            ("name", format!("{department} Ward {n}")),
            ("ward_type", ward_type.to_string()),
            ("capacity", self.rng.gen_range(10..=30).to_string()),
        ]
    }

    fn bed(&mut self) -> Fields {
        let ward = self.get("ward").to_string();
        let n = self.number("bed_number");
        let ward_type = self.get("ward_type").to_string();
        let bed_type = match ward_type.as_str() {
            "intensive_care" => "icu",
            "pediatric" => "pediatric",
            _ if self.rng.gen_bool(0.1) => "bariatric",
            _ => "standard",
        };
        let initials: String = ward
            .split_whitespace()
            .filter_map(|w| w.chars().next())
            .filter(|c| c.is_alphanumeric())
            .collect();
        vec![
            ("bed_number", format!("{initials}-{n:02}")),
            ("bed_type", bed_type.to_string()),
            ("is_available", self.rng.gen_bool(0.6).to_string()),
        ]
    }

    fn first_name(&mut self, gender: &str) -> &'static str {
        match gender {
            "female" => pick(self.rng, FEMALE_NAMES),
            "male" => pick(self.rng, MALE_NAMES),
            _ => pick(self.rng, NEUTRAL_NAMES),
        }
    }

    fn patient(&mut self) -> Fields {
        let gender = self.get("gender").to_string();
        let first = self.first_name(&gender);
        const BLOOD_WEIGHTS: [f64; 8] = [34.0, 6.0, 9.0, 2.0, 3.0, 1.0, 38.0, 7.0];
        let u = self.rng.gen::<f64>() * BLOOD_WEIGHTS.iter().sum::<f64>();
        let mut acc = 0.0;
        let mut blood = BLOOD_GROUPS[0];
        for (g, w) in BLOOD_GROUPS.iter().zip(BLOOD_WEIGHTS) {
            acc += w;
            if u < acc {
                blood = g;
                break;
            }
        }
        vec![
            ("first_name", first.to_string()),
            ("last_name", pick(self.rng, LAST_NAMES).to_string()),
            ("blood_group", blood.to_string()),
            ("phone", phone(self.rng)),
        ]
    }

    fn contact(&mut self) -> Fields {
        let last = self.get("last_name").to_string();
        let relationship = if self.age() < 18 {
            *pick(self.rng, &["parent", "parent", "guardian"])
        } else {
            *pick(self.rng, &["spouse", "child", "sibling", "friend", "parent"])
        };
        let gender = if self.rng.gen_bool(0.5) { "female" } else { "male" };
        let first = self.first_name(gender);
        let family = if relationship == "friend" {
            pick(self.rng, LAST_NAMES).to_string()
        } else {
            last
        };
        vec![
            ("name", format!("{first} {family}")),
            ("relationship", relationship.to_string()),
            ("phone", phone(self.rng)),
        ]
    }

    fn immunization(&mut self) -> Fields {
        let age = self.age();
        let options: Vec<&str> = VACCINES
            .iter()
            .copied()
            .filter(|v| match *v {
                "human papillomavirus" => (9..=45).contains(&age),
                "pneumococcal conjugate" => !(5..65).contains(&age),
                "varicella" | "measles mumps rubella" => age < 50,
                _ => true,
            })
            .collect();
        vec![
            ("vaccine", pick(self.rng, &options).to_string()),
            ("dose_number", self.rng.gen_range(1..=3).to_string()),
        ]
    }

    fn allergy(&mut self) -> Fields {
        let allergen = if self.rng.gen_bool(0.5) {
            pick(self.rng, DRUG_ALLERGENS)
        } else {
            pick(self.rng, OTHER_ALLERGENS)
        };
        let severity = *pick(self.rng, &["mild", "mild", "moderate", "moderate", "severe"]);
        vec![
            ("allergen", allergen.to_string()),
            ("reaction", pick(self.rng, REACTIONS).to_string()),
            ("severity", severity.to_string()),
        ]
    }

    fn history(&mut self) -> Fields {
        let age = self.age();
        let chronic: Vec<&str> = if age < 18 {
            if self.rng.gen_bool(0.25) {
                vec!["asthma"]
            } else {
                vec![]
            }
        } else {
            let n = match age {
                18..=39 => self.rng.gen_range(0..=1),
                40..=64 => self.rng.gen_range(0..=2),
                _ => self.rng.gen_range(1..=3),
            };
            let mut picked: Vec<&str> = CHRONIC_CONDITIONS.choose_multiple(self.rng, n).copied().collect();
            picked.sort_unstable();
            picked
        };
        let chronic_text = match chronic.as_slice() {
            [] => "The patient has no known chronic conditions.".to_string(),
            [one] => format!("The patient has chronic {one}."),
            many => format!(
                "The patient has chronic {} and {}.",
                many[..many.len() - 1].join(", "),
                many[many.len() - 1]
            ),
        };
        let surgeries = if age < 12 || self.rng.gen_bool(0.4) {
            "The patient has no past surgeries.".to_string()
        } else {
            let s = *pick(self.rng, PAST_SURGERIES);
            let ago = self.rng.gen_range(1..=(age / 3).max(2));
            format!("The patient had {s} {ago} years ago.")
        };
        let relative = *pick(self.rng, &["mother", "father", "grandmother", "grandfather", "sibling"]);
        let family = format!(
            "The patient has a family history of {} in a {relative}.",
            pick(self.rng, FAMILY_HISTORY)
        );
        vec![
            ("chronic_conditions", chronic_text),
            ("past_surgeries", surgeries),
            ("family_history", family),
        ]
    }

    /// A condition suggested by the chronic conditions, or any fitting one.
    fn presenting_condition(&mut self) -> &'static Condition {
        let chronic = self.get("chronic_conditions").to_lowercase();
        let related: Vec<&'static Condition> = CONDITIONS
            .iter()
            .filter(|c| self.fits(c))
            .filter(|c| {
                let key = c.name.split_whitespace().find(|w| w.len() > 4).unwrap_or(c.name);
                chronic.contains(key)
            })
            .collect();
        if !related.is_empty() && self.rng.gen_bool(0.5) {
            related.choose(self.rng).copied().expect("nonempty")
        } else {
            self.any_condition()
        }
    }

    fn appointment(&mut self) -> Fields {
        let c = self.presenting_condition();
        vec![("reason", c.complaint.to_string())]
    }

    fn visit(&mut self) -> Fields {
        let complaint = match catalog::condition_by_complaint(self.get("appointment_reason")) {
            Some(c) => c.complaint,
            None => self.presenting_condition().complaint,
        };
        vec![("chief_complaint", complaint.to_string())]
    }

    fn body_size(&mut self) -> (f64, f64) {
        let age = self.age() as f64;
        let female = self.get("gender") == "female";
        let (height, bmi) = if age < 18.0 {
            let h = if age < 2.0 { 50.0 + 25.0 * age } else { 75.0 + 6.0 * age };
            let h = if female { h.min(163.0) } else { h.min(176.0) };
            (h, 16.0 + 0.3 * age)
        } else if female {
            (163.0, 26.0)
        } else {
            (176.0, 27.0)
        };
        let h = gauss(self.rng, height, if age < 18.0 { 4.0 } else { 7.0 }).max(45.0);
        let b = gauss(self.rng, bmi, 3.0).clamp(13.0, 45.0);
        let w = b * (h / 100.0) * (h / 100.0);
        (round_to(h, 0), round_to(w.max(2.5), 1))
    }

    fn vitals(&mut self) -> Fields {
        let c = self.complaint_condition();
        let p: Profile = c.profile;
        let age = self.age();
        let (s_shift, d_shift, hr_shift) = match age {
            0..=4 => (-28.0, -22.0, 30.0),
            5..=11 => (-18.0, -15.0, 14.0),
            12..=17 => (-8.0, -8.0, 4.0),
            65.. => (8.0, 0.0, -2.0),
            _ => (0.0, 0.0, 0.0),
        };
        let mut systolic = round_to(gauss(self.rng, p.systolic + s_shift, 9.0), 0);
        let mut diastolic = round_to(gauss(self.rng, p.diastolic + d_shift, 6.0), 0).min(systolic - 20.0);
        let mut heart_rate = round_to(gauss(self.rng, p.heart_rate + hr_shift, 8.0), 0);
        let respiratory = round_to(gauss(self.rng, p.respiratory_rate, 2.0), 0).max(8.0);
        let mut temperature = round_to(gauss(self.rng, p.temperature, 0.3), 1);
        let mut spo2 = round_to(gauss(self.rng, p.spo2, 1.2), 0).min(100.0);
        let (height, weight) = self.body_size();
        let mut severity = SeverityBands::default().classify(systolic, diastolic).to_string();
        if self.defect() {
            match self.rng.gen_range(0..5) {
                0 => diastolic = 0.0,
                1 => systolic = 300.0,
                2 => heart_rate = 0.0,
                3 => temperature = 46.0,
                _ => spo2 = 40.0,
            }
            severity = SeverityBands::default().classify(systolic, diastolic).to_string();
        }
        if self.defect() {
            let wrong: Vec<&str> = SEVERITY_CLASSES.iter().copied().filter(|s| *s != severity).collect();
            severity = pick(self.rng, &wrong).to_string();
        }
        vec![
            ("systolic_bp", format!("{systolic} mmHg")),
            ("diastolic_bp", format!("{diastolic} mmHg")),
            ("heart_rate", format!("{heart_rate} bpm")),
            ("respiratory_rate", format!("{respiratory}")),
            ("temperature_c", format!("{temperature} C")),
            ("oxygen_saturation", format!("{spo2} %")),
            ("height_cm", format!("{height} cm")),
            ("weight_kg", format!("{weight} kg")),
            ("severity_classification", severity.replace('_', " ")),
        ]
    }

    fn labs(&mut self) -> Fields {
        let c = self.complaint_condition();
        let p = c.profile;
        let mut potassium = round_to(gauss(self.rng, p.potassium, 0.3), 1).max(2.6);
        let mut sodium = round_to(gauss(self.rng, p.sodium, 2.5), 0);
        let mut glucose = round_to(gauss(self.rng, p.glucose, if p.glucose > 150.0 { 35.0 } else { 12.0 }), 0).max(55.0);
        let creatinine = round_to(gauss(self.rng, p.creatinine, p.creatinine * 0.15), 2).max(0.3);
        let hemoglobin = round_to(gauss(self.rng, p.hemoglobin, 1.1), 1);
        let wbc = round_to(gauss(self.rng, p.wbc, 1.6), 1).max(2.5);
        if self.defect() {
            match self.rng.gen_range(0..3) {
                0 => potassium = 15.0,
                1 => sodium = 200.0,
                _ => glucose = 2000.0,
            }
        }
        let mut findings = Vec::new();
        if glucose > 140.0 {
            findings.push("high glucose");
        }
        if wbc > 11.0 {
            findings.push("raised white cell count");
        }
        if creatinine > 1.3 {
            findings.push("raised creatinine");
        }
        if potassium > 5.2 {
            findings.push("high potassium");
        } else if potassium < 3.5 {
            findings.push("low potassium");
        }
        if hemoglobin < 12.0 {
            findings.push("low hemoglobin");
        }
        let interpretation = if findings.is_empty() {
            "Labs are within normal limits.".to_string()
        } else {
            format!("Labs show {}.", findings.join(" and "))
        };
        vec![
            ("potassium_mmol_l", format!("{potassium} mmol/L")),
            ("sodium_mmol_l", format!("{sodium} mmol/L")),
            ("glucose_mg_dl", format!("{glucose} mg/dL")),
            ("creatinine_mg_dl", format!("{creatinine} mg/dL")),
            ("hemoglobin_g_dl", format!("{hemoglobin} g/dL")),
            ("wbc_k_ul", format!("{wbc}")),
            ("interpretation", interpretation),
        ]
    }

    fn diagnosis(&mut self) -> Fields {
        let mut c = self.complaint_condition();
        if self.defect() {
            c = self.other_condition(c);
        }
        let status = if self.rng.gen_bool(0.8) { "confirmed" } else { "provisional" };
        vec![
            ("icd10_code", c.icd10.to_string()),
            ("description", c.name.to_string()),
            ("status", status.to_string()),
        ]
    }

    fn admission(&mut self) -> Fields {
        let reason = match self.diagnosis_condition() {
            Some(c) => pick(self.rng, c.admission_reasons).to_string(),
            None => format!("admitted for further evaluation of {}", self.get("diagnosis")),
        };
        vec![("admission_reason", reason)]
    }

    fn plan(&mut self) -> Fields {
        let plan = match self.diagnosis_condition() {
            Some(mut c) => {
                if self.defect() {
                    // a plan whose topics belong to an unrelated condition
                    let own = c;
                    let unrelated: Vec<&'static Condition> = CONDITIONS
                        .iter()
                        .filter(|o| o.plans.iter().all(|p| !catalog::mentions_topic(own, p)))
                        .collect();
                    c = unrelated.choose(self.rng).copied().unwrap_or(own);
                }
                pick(self.rng, c.plans).to_string()
            }
            None => format!("supportive care and follow up for {}", self.get("diagnosis")),
        };
        vec![("plan_description", plan)]
    }

    fn medication(&mut self) -> Fields {
        let map = DrugClassMap::builtin();
        let allergic: Vec<String> = self
            .get("allergies")
            .split(',')
            .filter_map(|a| map.class_of_allergen(a).map(str::to_string))
            .collect();
        let candidates: Vec<&str> = self
            .diagnosis_condition()
            .map(|c| {
                c.drugs
                    .iter()
                    .copied()
                    .filter(|d| map.class_of_drug(d).is_none_or(|cl| !allergic.iter().any(|a| a == cl)))
                    .collect()
            })
            .unwrap_or_default();
        let n = self.number("medication_number");
        let mut drug = if candidates.is_empty() {
            "acetaminophen".to_string()
        } else {
            let offset = self.rng.gen_range(0..candidates.len());
            candidates[(offset + n - 1) % candidates.len()].to_string()
        };
        if !allergic.is_empty() && self.defect() {
            let class = pick(self.rng, &allergic).clone();
            let same: Vec<&str> = map.drugs_in_class(&class).collect();
            drug = pick(self.rng, &same).to_string();
        }
        let route = match drug.as_str() {
            "albuterol" | "tiotropium" | "budesonide" => "inhaled",
            "insulin glargine" => "subcutaneous",
            "ceftriaxone" | "piperacillin" | "morphine" | "cefazolin" | "nafcillin" => "intravenous",
            _ => "oral",
        };
        let dose = *pick(self.rng, &["5 mg", "10 mg", "20 mg", "25 mg", "40 mg", "50 mg", "250 mg", "500 mg"]);
        let frequency = *pick(self.rng, &["once daily", "twice daily", "every 8 hours", "as needed"]);
        vec![
            ("drug_name", drug),
            ("dose", dose.to_string()),
            ("route", route.to_string()),
            ("frequency", frequency.to_string()),
        ]
    }

    fn note(&mut self) -> Fields {
        let text = format!(
            "{}-year-old {} presenting with {}. Assessment: {}. Plan: {}.",
            self.get("age"),
            self.get("gender"),
            self.get("chief_complaint"),
            self.get("diagnosis"),
            self.get("plan").trim_end_matches('.'),
        );
        vec![("note_text", text)]
    }

    fn log(&mut self) -> Fields {
        let complaint = self.get("chief_complaint").to_string();
        let details = match self.get("event") {
            "check_in" => format!("patient checked in at registration for {complaint}"),
            "triage" => format!("triage assessment completed for {complaint}"),
            "consultation" => format!("physician consultation regarding {complaint}"),
            "procedure" => "bedside procedure performed without complications".to_string(),
            "medication_administered" => "first dose of prescribed medication given".to_string(),
            _ => "patient checked out with written instructions".to_string(),
        };
        vec![("details", details)]
    }

    fn discharge(&mut self) -> Fields {
        let diagnosis = self.get("diagnosis").to_string();
        let mut discharge_dx = self
            .diagnosis_condition()
            .map(|c| c.name.to_string())
            .unwrap_or_else(|| diagnosis.clone());
        if let Some(c) = self.diagnosis_condition() {
            if self.defect() {
                discharge_dx = self.other_condition(c).name.to_string();
            }
        }
        let summary = format!(
            "The patient was {}. Treatment followed the plan to {}. The condition improved and the patient was stable at discharge.",
            self.get("admission_reason").trim_end_matches('.'),
            self.get("plan").trim_end_matches('.'),
        );
        let disposition = *pick(
            self.rng,
            &["home", "home", "home", "home_health", "skilled_nursing", "rehabilitation", "transfer"],
        );
        vec![
            ("discharge_diagnosis", discharge_dx),
            ("summary_text", summary),
            ("disposition", disposition.to_string()),
        ]
    }

    fn referral(&mut self) -> Fields {
        let reason = format!(
            "specialist evaluation and management of {} in {}",
            self.get("diagnosis"),
            self.get("department")
        );
        let urgency = if self.rng.gen_bool(0.25) { "urgent" } else { "routine" };
        vec![("reason", reason), ("urgency", urgency.to_string())]
    }

    fn bill(&mut self) -> Fields {
        let amount = match self.get("visit_type") {
            "inpatient" => self.rng.gen_range(4000.0..25000.0),
            "emergency" => self.rng.gen_range(800.0..3500.0),
            _ => self.rng.gen_range(150.0..600.0),
        };
        let status = *pick(self.rng, &["paid", "paid", "pending", "denied"]);
        vec![
            ("amount", format!("{:.2}", amount)),
            ("insurance_provider", pick(self.rng, INSURERS).to_string()),
            ("status", status.to_string()),
        ]
    }
}
