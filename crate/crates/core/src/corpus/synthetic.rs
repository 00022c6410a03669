use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Corpus, InformationUnit, Question};

/// Seeded corpus of `n` resolved questions with three information units each.
/// Roughly 40% of questions resolve Yes.
pub fn synthetic_corpus(n: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = NaiveDate::from_ymd_opt(2025, 4, 1).expect("valid date");
    let mut questions = Vec::with_capacity(n);
    let mut units = Vec::with_capacity(3 * n);
    for i in 1..=n {
        let id = format!("syn-{i:04}");
        let yes = rng.random_bool(0.4);
        let threshold: u32 = rng.random_range(100..900);
        questions.push(Question {
            id: id.clone(),
            title: format!("Will indicator {i} exceed {threshold} by the resolution date?"),
            description: format!("Synthetic question {i} tracking a made-up indicator."),
            resolution_criteria: format!(
                "Resolves Yes if indicator {i} is reported above {threshold}."
            ),
            fine_print: if i % 4 == 0 {
                String::new()
            } else {
                "Revisions after the resolution date are ignored.".to_string()
            },
            as_of_date: start + Days::new((i % 60) as u64),
            resolved_outcome: Some(u8::from(yes)),
        });
        for k in 1..=3u8 {
            units.push(InformationUnit {
                question_id: id.clone(),
                index: k,
                text: format!("Unit {k} for question {i}: background fact number {k}."),
            });
        }
    }
    Corpus::new(questions, units).expect("synthetic corpus is valid by construction")
}
