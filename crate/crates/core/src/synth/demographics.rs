//! Demographic sampling by inverse CDF over configured distributions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::GEOGRAPHY;
use crate::schema::{ETHNICITIES, GENDERS};

/// Category name to relative weight. Weights need not sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Categorical {
    pub weights: Vec<(String, f64)>,
}

impl Categorical {
    pub fn uniform(categories: &[&str]) -> Self {
        Self {
            weights: categories.iter().map(|c| (c.to_string(), 1.0)).collect(),
        }
    }

    pub fn weighted(pairs: &[(&str, f64)]) -> Self {
        Self {
            weights: pairs.iter().map(|(c, w)| (c.to_string(), *w)).collect(),
        }
    }

    /// Categories with positive weight, in declaration order.
    pub fn support(&self) -> Vec<&str> {
        self.weights
            .iter()
            .filter(|(_, w)| *w > 0.0)
            .map(|(c, _)| c.as_str())
            .collect()
    }

    /// Inverse-CDF lookup for `u` in [0, 1).
    pub fn quantile(&self, u: f64) -> &str {
        let total: f64 = self.weights.iter().map(|(_, w)| w.max(0.0)).sum();
        let target = u * total;
        let mut acc = 0.0;
        let mut last = None;
        for (c, w) in &self.weights {
            if *w <= 0.0 {
                continue;
            }
            acc += w;
            last = Some(c.as_str());
            if target < acc {
                return c;
            }
        }
        last.expect("categorical distribution has no positive weight")
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &str {
        self.quantile(rng.gen::<f64>())
    }

    pub fn is_valid(&self) -> bool {
        self.weights.iter().all(|(_, w)| w.is_finite() && *w >= 0.0)
            && self.weights.iter().any(|(_, w)| *w > 0.0)
    }
}

/// Age in whole years: a band is chosen by weight, then a uniform age inside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeBand {
    pub min: u32,
    pub max: u32,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityParams {
    pub gender: Categorical,
    pub ethnicity: Categorical,
    /// Weights over states; the city is drawn uniformly within the state.
    pub geography: Categorical,
    pub age_bands: Vec<AgeBand>,
}

impl Default for DiversityParams {
    fn default() -> Self {
        Self {
            gender: Categorical::weighted(&[
                (GENDERS[0], 0.48),
                (GENDERS[1], 0.47),
                (GENDERS[2], 0.03),
                (GENDERS[3], 0.02),
            ]),
            ethnicity: Categorical::weighted(&[
                (ETHNICITIES[0], 0.04),
                (ETHNICITIES[1], 0.12),
                (ETHNICITIES[2], 0.17),
                (ETHNICITIES[3], 0.22),
                (ETHNICITIES[4], 0.03),
                (ETHNICITIES[5], 0.36),
                (ETHNICITIES[6], 0.06),
            ]),
            geography: Categorical::uniform(&GEOGRAPHY.iter().map(|(s, _)| *s).collect::<Vec<_>>()),
            age_bands: vec![
                AgeBand { min: 0, max: 17, weight: 0.2 },
                AgeBand { min: 18, max: 64, weight: 0.55 },
                AgeBand { min: 65, max: 95, weight: 0.25 },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Demographics {
    pub age: u32,
    pub gender: String,
    pub ethnicity: String,
    pub state: String,
    pub city: String,
}

impl DiversityParams {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Demographics {
        let band_weights = Categorical {
            weights: self
                .age_bands
                .iter()
                .enumerate()
                .map(|(i, b)| (i.to_string(), b.weight))
                .collect(),
        };
        let band: usize = band_weights.sample(rng).parse().expect("band index");
        let band = &self.age_bands[band];
        let age = rng.gen_range(band.min..=band.max);
        let gender = self.gender.sample(rng).to_string();
        let ethnicity = self.ethnicity.sample(rng).to_string();
        let state = self.geography.sample(rng).to_string();
        let cities = GEOGRAPHY
            .iter()
            .find(|(s, _)| *s == state)
            .map(|(_, c)| *c)
            .unwrap_or(&["Springfield"]);
        let city = cities[rng.gen_range(0..cities.len())].to_string();
        Demographics {
            age,
            gender,
            ethnicity,
            state,
            city,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, dist) in [
            ("gender", &self.gender),
            ("ethnicity", &self.ethnicity),
            ("geography", &self.geography),
        ] {
            if !dist.is_valid() {
                return Err(format!("{name} weights must be nonnegative with a positive total"));
            }
        }
        if self.age_bands.is_empty() || self.age_bands.iter().all(|b| b.weight <= 0.0) {
            return Err("age_bands needs at least one band with positive weight".into());
        }
        if self.age_bands.iter().any(|b| b.min > b.max || b.max > 120 || b.weight < 0.0) {
            return Err("age band bounds must satisfy min <= max <= 120".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quantile_walks_the_cdf() {
        let c = Categorical::weighted(&[("a", 1.0), ("b", 0.0), ("c", 3.0)]);
        assert_eq!(c.quantile(0.0), "a");
        assert_eq!(c.quantile(0.249), "a");
        assert_eq!(c.quantile(0.25), "c");
        assert_eq!(c.quantile(0.999), "c");
        assert_eq!(c.support(), ["a", "c"]);
    }

    #[test]
    fn sampling_is_seeded() {
        let p = DiversityParams::default();
        let a = p.sample(&mut ChaCha8Rng::seed_from_u64(3));
        let b = p.sample(&mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        assert!(GEOGRAPHY.iter().any(|(s, cities)| *s == a.state && cities.contains(&a.city.as_str())));
    }

    #[test]
    fn rejects_bad_params() {
        let mut p = DiversityParams::default();
        assert!(p.validate().is_ok());
        p.gender = Categorical::weighted(&[("female", 0.0)]);
        assert!(p.validate().is_err());
    }
}
