//! Deterministic simulated forecaster.
//!
//! Stage one draws a logit from the resolved outcome, the amount of
//! information seen, a bias and seeded Gaussian noise. Stage two moves the
//! stage-one probability toward the mean of the two peers by `peer_weight`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::{ModelId, Stage};
use crate::corpus::Question;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    /// Logit-scale signal toward the true outcome with no information.
    pub base_skill: f64,
    /// Extra signal per information unit seen.
    #[serde(default)]
    pub info_skill: f64,
    #[serde(default)]
    pub bias: f64,
    pub noise_sd: f64,
    /// Stage-two weight on the peer mean, in [0, 1].
    #[serde(default)]
    pub peer_weight: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            base_skill: 1.0,
            info_skill: 0.0,
            bias: 0.0,
            noise_sd: 1.0,
            peer_weight: 0.0,
            seed: 0,
        }
    }
}

/// Everything a simulated call depends on.
#[derive(Debug, Clone, Copy)]
pub struct SimCall<'a> {
    pub model_id: ModelId,
    pub question: &'a Question,
    pub agent_index: usize,
    pub units_seen: usize,
    /// Peer probabilities on the 0-100 scale (stage two only).
    pub peer_probs: Option<[f64; 2]>,
    /// Run-level seed mixed with the agent's own seed.
    pub run_seed: u64,
}

fn noise_seed(params: &SimParams, call: &SimCall<'_>, stage: Stage) -> u64 {
    let key = format!(
        "{}|{}|{}|{}|{}|{}",
        call.run_seed,
        params.seed,
        call.model_id.as_str(),
        call.question.id,
        call.agent_index,
        stage.as_str()
    );
    let digest = Sha256::digest(key.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Stage-one probability on the 0-100 scale.
pub fn stage1_probability(params: &SimParams, call: &SimCall<'_>) -> f64 {
    let direction = match call.question.resolved_outcome {
        Some(1) => 1.0,
        Some(_) => -1.0,
        None => 0.0,
    };
    let skill = params.base_skill + params.info_skill * call.units_seen as f64;
    let noise = if params.noise_sd > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed(params, call, Stage::Independent));
        Normal::new(0.0, params.noise_sd)
            .expect("noise_sd is positive and finite")
            .sample(&mut rng)
    } else {
        0.0
    };
    (100.0 * logistic(skill * direction + params.bias + noise)).clamp(0.0, 100.0)
}

/// Simulated reply payload, shaped like the stage's output schema.
pub fn simulate(params: &SimParams, call: &SimCall<'_>, stage: Stage) -> String {
    let own = stage1_probability(params, call);
    let header = format!(
        "Simulated forecaster {} #{} (skill {:.3}, info skill {:.3}, bias {:.3}, noise {:.3}, peer weight {:.3}) with {} information unit(s)",
        call.model_id.as_str(),
        call.agent_index,
        params.base_skill,
        params.info_skill,
        params.bias,
        params.noise_sd,
        params.peer_weight,
        call.units_seen,
    );
    let payload = match (stage, call.peer_probs) {
        (Stage::Deliberative, Some(peers)) => {
            let w = params.peer_weight.clamp(0.0, 1.0);
            let peer_mean = 0.5 * (peers[0] + peers[1]);
            let updated = ((1.0 - w) * own + w * peer_mean).clamp(0.0, 100.0);
            json!({
                "review": format!("Peers forecast {} and {}.", peers[0], peers[1]),
                "rationale": format!("{header}: moved from {own} toward the peer mean {peer_mean}."),
                "probability": updated,
            })
        }
        _ => json!({
            "time_left_until_outcome_known": "until the resolution date",
            "status_quo_outcome": "unchanged",
            "no_outcome_scenario": "the indicator stays put",
            "yes_outcome_scenario": "the indicator moves",
            "rationale": format!("{header}: independent estimate for {}.", call.question.id),
            "probability": own,
        }),
    };
    payload.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::parse::parse_response;
    use chrono::NaiveDate;

    fn question() -> Question {
        Question {
            id: "q".into(),
            title: "t".into(),
            description: "d".into(),
            resolution_criteria: "r".into(),
            fine_print: String::new(),
            as_of_date: NaiveDate::from_ymd_opt(2025, 5, 1).unwrap(),
            resolved_outcome: Some(1),
        }
    }

    fn call(q: &Question, peers: Option<[f64; 2]>) -> SimCall<'_> {
        SimCall {
            model_id: ModelId::Gpt5,
            question: q,
            agent_index: 1,
            units_seen: 3,
            peer_probs: peers,
            run_seed: 9,
        }
    }

    #[test]
    fn zero_update_without_noise() {
        let q = question();
        let params = SimParams {
            noise_sd: 0.0,
            ..SimParams::default()
        };
        let s1 = parse_response(&simulate(&params, &call(&q, None), Stage::Independent), Stage::Independent).unwrap();
        let s2 = parse_response(
            &simulate(&params, &call(&q, Some([10.0, 90.0])), Stage::Deliberative),
            Stage::Deliberative,
        )
        .unwrap();
        assert_eq!(s1.probability, s2.probability);
        assert!((s1.probability - 100.0 * logistic(1.0)).abs() < 1e-12);
    }

    #[test]
    fn full_adoption_takes_peer_mean() {
        let q = question();
        let params = SimParams {
            peer_weight: 1.0,
            ..SimParams::default()
        };
        let out = simulate(&params, &call(&q, Some([40.0, 60.0])), Stage::Deliberative);
        assert_eq!(parse_response(&out, Stage::Deliberative).unwrap().probability, 50.0);
    }

    #[test]
    fn deterministic_given_seed() {
        let q = question();
        let params = SimParams {
            noise_sd: 2.0,
            seed: 3,
            ..SimParams::default()
        };
        let a = simulate(&params, &call(&q, None), Stage::Independent);
        let b = simulate(&params, &call(&q, None), Stage::Independent);
        assert_eq!(a, b);
        let mut other = call(&q, None);
        other.agent_index = 2;
        assert_ne!(a, simulate(&params, &other, Stage::Independent));
    }
}
