//! Masked-user validation and MRR@K.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Dataset, InteractionMatrix};
use crate::error::{Error, Result};

/// Who is asking for recommendations.
#[derive(Debug, Clone, Copy)]
pub struct UserQuery<'a> {
    /// Row of the user in the model's training matrix, if the user was seen
    /// during fitting.
    pub row: Option<usize>,
    /// Tracks the user has interacted with, ascending. They are never
    /// recommended and profile-based models score from them.
    pub profile: &'a [u32],
}

/// Anything that turns a user into a ranked track list.
pub trait Recommender {
    /// Up to `k` track columns, best first.
    fn recommend(&self, query: UserQuery<'_>, k: usize) -> Result<Vec<u32>>;

    /// Matrix the model was fitted on, whose rows define `UserQuery::row`.
    fn fitted_on(&self) -> Option<&InteractionMatrix> {
        None
    }
}

impl<T: Recommender + ?Sized> Recommender for &T {
    fn recommend(&self, query: UserQuery<'_>, k: usize) -> Result<Vec<u32>> {
        (**self).recommend(query, k)
    }

    fn fitted_on(&self) -> Option<&InteractionMatrix> {
        (**self).fitted_on()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeldOut {
    pub user: u32,
    pub track: u32,
    /// Remaining distinct tracks of the user, ascending.
    pub profile: Vec<u32>,
}

/// One held-out positive per validation user.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationProtocol {
    pub entries: Vec<HeldOut>,
    /// Validation users dropped for having fewer than two distinct tracks.
    pub dropped: usize,
}

impl ValidationProtocol {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Holds out one uniformly chosen distinct track of each validation user.
pub fn hold_out(dataset: &Dataset, validation_users: &[u32], seed: u64) -> ValidationProtocol {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut users = validation_users.to_vec();
    users.sort_unstable();
    users.dedup();
    let mut protocol = ValidationProtocol::default();
    for user in users {
        let mut tracks = dataset.user_tracks(user);
        if tracks.len() < 2 {
            protocol.dropped += 1;
            continue;
        }
        let pick = rng.random_range(0..tracks.len());
        let track = tracks.remove(pick);
        protocol.entries.push(HeldOut {
            user,
            track,
            profile: tracks,
        });
    }
    if protocol.dropped > 0 {
        log::info!(
            "hold-out dropped {} validation users with fewer than 2 tracks",
            protocol.dropped
        );
    }
    protocol
}

/// Reciprocal rank of `relevant` within the first `k` entries, else 0.
pub fn mrr_at_k(ranked: &[u32], relevant: u32, k: usize) -> f64 {
    ranked
        .iter()
        .take(k)
        .position(|&t| t == relevant)
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

/// Mean MRR@`k` over the protocol. Validation users are queried as unseen
/// users with their visible profile.
pub fn validate<R: Recommender + ?Sized>(model: &R, protocol: &ValidationProtocol, k: usize) -> Result<f64> {
    if protocol.is_empty() {
        return Err(Error::InvalidArgument("empty validation protocol".into()));
    }
    let mut total = 0.0;
    for entry in &protocol.entries {
        let ranked = model.recommend(
            UserQuery {
                row: None,
                profile: &entry.profile,
            },
            k,
        )?;
        total += mrr_at_k(&ranked, entry.track, k);
    }
    Ok(total / protocol.len() as f64)
}

/// Expected MRR@`k` of a ranker returning a uniformly random permutation of
/// `n` candidates.
pub fn random_ranker_mrr(n: usize, k: usize) -> f64 {
    (1..=k.min(n)).map(|r| 1.0 / r as f64).sum::<f64>() / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ListeningEvent;
    use rand::seq::SliceRandom;

    fn dataset(tracks_per_user: &[usize]) -> Dataset {
        let mut events = Vec::new();
        for (u, &n) in tracks_per_user.iter().enumerate() {
            for t in 0..n {
                events.push(ListeningEvent {
                    user_id: format!("u{u:03}"),
                    track_id: format!("t{t:03}"),
                    artist_id: "a".into(),
                    user_country: "FR".parse().unwrap(),
                    timestamp: None,
                });
            }
        }
        Dataset::from_events(events).unwrap()
    }

    #[test]
    fn mrr_examples() {
        assert_eq!(mrr_at_k(&[4, 2, 9], 4, 10), 1.0);
        assert_eq!(mrr_at_k(&[4, 2, 9], 9, 10), 1.0 / 3.0);
        assert_eq!(mrr_at_k(&[4, 2, 9], 7, 10), 0.0);
        assert_eq!(mrr_at_k(&[4, 2, 9], 9, 2), 0.0);
    }

    #[test]
    fn hold_out_shapes() {
        let d = dataset(&[2, 1, 5]);
        let p = hold_out(&d, &[0, 1, 2], 11);
        assert_eq!(p.dropped, 1);
        assert_eq!(p.len(), 2);
        assert_eq!(p.entries[0].profile.len(), 1);
        assert_ne!(p.entries[0].profile[0], p.entries[0].track);
        assert_eq!(p, hold_out(&d, &[0, 1, 2], 11));

        let d = dataset(&[3; 100]);
        let users: Vec<u32> = (0..100).collect();
        assert_eq!(hold_out(&d, &users, 0).len(), 100);
    }

    struct Perfect<'a>(&'a ValidationProtocol);

    impl Recommender for Perfect<'_> {
        fn recommend(&self, query: UserQuery<'_>, _k: usize) -> Result<Vec<u32>> {
            let entry = self.0.entries.iter().find(|e| e.profile == query.profile).unwrap();
            Ok(vec![entry.track])
        }
    }

    #[test]
    fn perfect_model_scores_one() {
        let d = dataset(&[4, 4, 4]);
        let p = hold_out(&d, &[0, 1, 2], 5);
        assert_eq!(validate(&Perfect(&p), &p, 10).unwrap(), 1.0);
        assert!(validate(&Perfect(&p), &ValidationProtocol::default(), 10).is_err());
    }

    #[test]
    fn random_ranker_matches_expectation() {
        let n = 1000;
        let expected = random_ranker_mrr(n, 10);
        assert!((expected - 0.002_928_968).abs() < 1e-8);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut catalog: Vec<u32> = (0..n as u32).collect();
        let trials = 10_000;
        let mut total = 0.0;
        for _ in 0..trials {
            let relevant = rng.random_range(0..n as u32);
            let (top, _) = catalog.partial_shuffle(&mut rng, 10);
            total += mrr_at_k(top, relevant, 10);
        }
        let empirical = total / trials as f64;
        assert!(
            (empirical - expected).abs() <= 0.2 * expected,
            "{empirical} vs {expected}"
        );
    }
}
