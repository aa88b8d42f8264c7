mod common;

use std::collections::BTreeMap;

use common::*;
use pot_core::codec::Canonical;
use pot_core::crypto::Digest32;
use pot_core::ledger::{AdmitError, GlobalLedger, Outcome, Stage, TxLog};
use pot_core::records::{Batch, Delivered, Report, Settled, Tokens, Tx, Vote};
use pot_core::workload::{Score, ToyModel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn newer_commit_replaces_older() {
    let mut f = Fixture::new(0, 100, 50, 50);
    f.admit(50, f.commit(0, &f.model(1), 50)).unwrap();
    f.admit(80, f.commit(0, &f.model(2), 80)).unwrap();
    let cycle = f.ledger.order(&f.oid()).unwrap();
    assert_eq!(cycle.m_list.len(), 1);
    assert_eq!(cycle.m_list[0].claim.commit_time, 80);
    assert_eq!(f.ledger.tx_pool.claims.len(), 1);
    assert_eq!(f.admit(100, f.commit(0, &f.model(3), 100)), Err(AdmitError::WindowClosed));
}

#[test]
fn re_signed_stolen_model_cannot_be_committed() {
    let mut f = Fixture::new(0, 100, 50, 50);
    let m = f.model(4);
    f.admit(50, f.commit(0, &m, 50)).unwrap();
    f.admit(110, f.reveal(0, &m)).unwrap();
    assert_eq!(f.admit(120, f.commit(1, &m, 120)), Err(AdmitError::WindowClosed));
    // Revealing someone else's model under an unrelated commitment fails too.
    f.admit(50, f.commit(1, &f.model(0), 50)).unwrap_err();
}

#[test]
fn reveal_checks() {
    let mut f = Fixture::new(0, 100, 50, 50);
    let m = f.model(4);
    assert_eq!(f.admit(110, f.reveal(0, &m)), Err(AdmitError::UnknownClaim));
    let mut f = Fixture::new(0, 100, 50, 50);
    f.admit(50, f.commit(0, &m, 50)).unwrap();
    assert_eq!(f.admit(100, f.reveal(0, &m)), Err(AdmitError::TooEarly));
    assert_eq!(f.admit(101, f.reveal(0, &f.model(5))), Err(AdmitError::SignatureMismatch));
    f.admit(101, f.reveal(0, &m)).unwrap();
    assert_eq!(f.admit(102, f.reveal(0, &m)), Err(AdmitError::Duplicate));
    assert_eq!(f.ledger.models.len(), 1);
}

#[test]
fn validation_checks() {
    let mut f = Fixture::new(0, 100, 50, 50);
    let m = f.model(4);
    f.admit(50, f.commit(0, &m, 50)).unwrap();
    f.admit(101, f.reveal(0, &m)).unwrap();
    let s = f.true_score(&m);
    f.admit(110, Tx::Validation(f.validation(0, &m, s, 110))).unwrap();
    assert_eq!(f.admit(111, Tx::Validation(f.validation(0, &m, s, 111))), Err(AdmitError::Duplicate));
    assert_eq!(f.admit(112, Tx::Validation(f.validation(1, &f.model(9), s, 112))), Err(AdmitError::UnknownModel));
    assert_eq!(f.admit(151, Tx::Validation(f.validation(1, &m, s, 151))), Err(AdmitError::WindowClosed));
}

/// Commit, reveal and one validation per listed score, all on miner 0's
/// model.
fn validated(scores: &[Option<Score>]) -> (Fixture, ToyModel, Vec<pot_core::records::Validation>) {
    let mut f = Fixture::new(0, 10, 10, 10);
    let m = f.model(6);
    f.admit(1, f.commit(0, &m, 1)).unwrap();
    f.admit(11, f.reveal(0, &m)).unwrap();
    let truth = f.true_score(&m);
    let vs: Vec<_> = scores.iter().enumerate().map(|(i, s)| f.validation(i, &m, s.unwrap_or(truth), 12)).collect();
    for v in &vs {
        f.admit(12, Tx::Validation(v.clone())).unwrap();
    }
    (f, m, vs)
}

#[test]
fn upheld_challenge_slashes_the_validator() {
    let (mut f, m, vs) = validated(&[Some(Score(1)), None]);
    let v_pk = f.validators[0].public_key();
    let c_pk = f.verifier.public_key();
    let total = f.ledger.book.total();
    let (vs0, cb0) = (f.ledger.book.stake(&v_pk), f.ledger.book.balance(&c_pk));
    f.admit(13, f.challenge(&vs[0], 13)).unwrap();
    assert_eq!(f.ledger.book.stake(&v_pk), Tokens(vs0.0 - Tokens::whole(10).0));
    assert_eq!(f.ledger.book.balance(&c_pk), cb0 + Tokens::whole(5));
    assert_eq!(f.ledger.book.total(), total);
    // A second challenge on a struck validation is a duplicate.
    assert_eq!(f.admit(14, f.challenge(&vs[0], 14)), Err(AdmitError::Duplicate));

    f.apply(40, vec![]);
    let cycle = f.ledger.order(&f.oid()).unwrap();
    let Some(Outcome::Winner { score, validators, .. }) = &cycle.outcome else { panic!("{:?}", cycle.outcome) };
    assert_eq!(*score, f.true_score(&m));
    assert_eq!(validators, &vec![f.validators[1].public_key()]);
}

#[test]
fn false_challenge_forfeits_collateral() {
    let (mut f, _, vs) = validated(&[None]);
    let v_pk = f.validators[0].public_key();
    let c_pk = f.verifier.public_key();
    let (vb0, cs0) = (f.ledger.book.balance(&v_pk), f.ledger.book.stake(&c_pk));
    f.admit(13, f.challenge(&vs[0], 13)).unwrap();
    assert_eq!(f.ledger.book.stake(&c_pk), Tokens(cs0.0 - Tokens::whole(5).0));
    assert_eq!(f.ledger.book.balance(&v_pk), vb0 + Tokens(Tokens::whole(5).0 / 2));
}

#[test]
fn challenge_after_window_is_rejected() {
    let (mut f, _, vs) = validated(&[Some(Score(1))]);
    let end = f.windows().challenge_end;
    assert_eq!(f.admit(end + 1, f.challenge(&vs[0], end + 1)), Err(AdmitError::WindowClosed));
}

#[test]
fn full_cycle_settles_and_prunes() {
    let (mut f, _, _) = validated(&[None, None]);
    let total = f.ledger.book.total();
    let r = f.apply(31, vec![]);
    assert_eq!(r.finalized, vec![f.oid()]);
    assert!(matches!(f.ledger.order(&f.oid()).unwrap().stage, Stage::AwaitingDelivery { .. }));
    let settled = Tx::Settled(Settled::signed(&f.aggregator, f.oid()));
    assert_eq!(f.admit(32, settled.clone()), Err(AdmitError::WrongStage));
    f.admit(32, Tx::Delivered(Delivered::signed(&f.client, f.oid()))).unwrap();
    assert_eq!(f.ledger.ready_for_settlement(), vec![f.oid()]);
    let miner = f.miners[0].public_key();
    let before = f.ledger.book.balance(&miner);
    let r = f.apply(33, vec![settled]);
    assert_eq!(r.settled.len(), 1);
    // 80 to the miner, two validators share 18, two tokens of tax.
    assert_eq!(f.ledger.book.balance(&miner), before + Tokens::whole(80));
    assert_eq!(f.ledger.book.balance(&f.aggregator.public_key()), Tokens::whole(10_000 - 1000 + 2));
    assert!(f.ledger.table.is_empty() && f.ledger.models.is_empty() && f.ledger.tx_pool.claims.is_empty());
    assert_eq!(f.ledger.book.total(), total);
}

#[test]
fn no_models_refunds_minus_tax() {
    let mut f = Fixture::new(0, 5, 5, 5);
    let client = f.client.public_key();
    let before = f.ledger.book.balance(&client);
    f.apply(16, vec![]);
    assert_eq!(f.ledger.order(&f.oid()).unwrap().outcome, Some(Outcome::Refunded));
    f.admit(17, Tx::Settled(Settled::signed(&f.aggregator, f.oid()))).unwrap();
    assert_eq!(f.ledger.book.balance(&client), before + Tokens::whole(98));
}

#[test]
fn upheld_report_slashes_the_winner_and_refunds_the_client() {
    let (mut f, _, _) = validated(&[None]);
    f.apply(31, vec![]);
    let miner = f.miners[0].public_key();
    let client = f.client.public_key();
    let before = f.ledger.book.balance(&client);
    f.admit(32, Tx::Report(Report::signed(&f.client, f.oid()))).unwrap();
    let voters: Vec<_> = f.validators.iter().chain([&f.verifier, &f.miners[1]]).cloned().collect();
    for k in &voters {
        let _ = f.admit(33, Tx::Vote(Vote::signed(k, f.oid(), true)));
    }
    assert_eq!(f.ledger.order(&f.oid()).unwrap().stage, Stage::Ready);
    assert_eq!(f.ledger.book.stake(&miner), Tokens::ZERO);
    f.admit(34, Tx::Settled(Settled::signed(&f.aggregator, f.oid()))).unwrap();
    // Half the slashed stake plus the miner's 80-token share.
    assert_eq!(f.ledger.book.balance(&client), before + Tokens::whole(50) + Tokens::whole(80));
}

#[test]
fn miner_cannot_vote_on_its_own_report() {
    let (mut f, _, _) = validated(&[None]);
    f.apply(31, vec![]);
    f.admit(32, Tx::Report(Report::signed(&f.client, f.oid()))).unwrap();
    let own = Tx::Vote(Vote::signed(&f.miners[0], f.oid(), false));
    assert_eq!(f.admit(33, own), Err(AdmitError::UnknownSender));
}

#[test]
fn replayed_transactions_are_rejected() {
    let mut f = Fixture::new(0, 100, 50, 50);
    let c = f.commit(0, &f.model(1), 10);
    f.admit(10, c.clone()).unwrap();
    assert_eq!(f.admit(11, c), Err(AdmitError::Duplicate));
}

// ---------------------------------------------------------------- random histories

struct History {
    genesis: GlobalLedger,
    log: TxLog,
    /// Admitted transactions with the ledger time they were applied at.
    admitted: Vec<(u64, Tx)>,
    windows: (u64, u64, u64, u64),
    final_ledger: GlobalLedger,
    totals: Vec<Tokens>,
}

/// Random mix of honest and dishonest traffic against one order, one batch
/// per second.
fn random_history(seed: u64) -> History {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (t0, dt_train, dt_val, dt_ch) = (rng.gen_range(1..5), rng.gen_range(2..8), rng.gen_range(2..8), rng.gen_range(2..8));
    let mut f = Fixture::new(t0, dt_train, dt_val, dt_ch);
    let genesis = f.ledger.clone();
    let mut log = TxLog { batches: Vec::new() };
    let mut admitted = Vec::new();
    let mut totals = vec![f.ledger.book.total()];
    let mut committed: BTreeMap<usize, ToyModel> = BTreeMap::new();
    let mut validations: Vec<pot_core::records::Validation> = Vec::new();
    let end = t0 + dt_train + dt_val + dt_ch + 40;
    for t in 1..end {
        let mut txs = Vec::new();
        let mut pending = Vec::new();
        for _ in 0..rng.gen_range(0..4) {
            let tx = match rng.gen_range(0..8) {
                0 | 1 => {
                    let i = rng.gen_range(0..2);
                    let m = f.model(rng.gen_range(-5..5));
                    let tx = f.commit(i, &m, t.saturating_sub(rng.gen_range(0..2)));
                    pending.push((tx.digest(), i, m));
                    tx
                }
                2 => {
                    let i = rng.gen_range(0..2);
                    let m = committed.get(&i).cloned().unwrap_or_else(|| f.model(0));
                    f.reveal(i, &m)
                }
                3 | 4 => {
                    let Some(m) = committed.values().nth(rng.gen_range(0..committed.len().max(1))).cloned() else { continue };
                    let truth = f.true_score(&m);
                    let s = if rng.gen_bool(0.3) { Score(truth.0 / 2) } else { truth };
                    Tx::Validation(f.validation(rng.gen_range(0..3), &m, s, t))
                }
                5 => {
                    if validations.is_empty() {
                        continue;
                    }
                    let v = validations[rng.gen_range(0..validations.len())].clone();
                    f.challenge(&v, t)
                }
                6 => Tx::Delivered(Delivered::signed(&f.client, f.oid())),
                _ => Tx::Settled(Settled::signed(&f.aggregator, f.oid())),
            };
            txs.push(tx);
        }
        let batch = Batch::new(t, None, txs);
        let r = f.ledger.apply_batch(&batch);
        for (d, i, m) in pending {
            if r.admitted.contains(&d) {
                committed.insert(i, m);
            }
        }
        for tx in &batch.txs {
            if let Tx::Validation(v) = tx {
                if r.admitted.contains(&tx.digest()) {
                    validations.push(v.clone());
                }
            }
        }
        for tx in &batch.txs {
            if r.admitted.contains(&tx.digest()) {
                admitted.push((f.ledger.time, tx.clone()));
            }
        }
        totals.push(f.ledger.book.total());
        log.batches.push(batch);
    }
    History { genesis, log, admitted, windows: (t0, dt_train, dt_val, dt_ch), final_ledger: f.ledger, totals }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tokens_are_conserved(seed in any::<u64>()) {
        let h = random_history(seed);
        prop_assert!(h.totals.windows(2).all(|w| w[0] == w[1]), "{:?}", h.totals);
    }

    #[test]
    fn replay_reproduces_the_state(seed in any::<u64>()) {
        let h = random_history(seed);
        let again = h.log.replay(h.genesis.clone());
        prop_assert_eq!(again.state_root(), h.final_ledger.state_root());
        let log2 = TxLog::from_bytes(&h.log.to_bytes()).unwrap();
        prop_assert_eq!(log2.replay(h.genesis).state_root(), h.final_ledger.state_root());
    }

    #[test]
    fn ledger_round_trips_through_its_encoding(seed in any::<u64>()) {
        let h = random_history(seed);
        let bytes = h.final_ledger.to_bytes();
        let back = GlobalLedger::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn admitted_records_respect_the_windows(seed in any::<u64>()) {
        let h = random_history(seed);
        let (t0, dt, dv, dc) = h.windows;
        let mut vtime: BTreeMap<Digest32, u64> = BTreeMap::new();
        for (now, tx) in &h.admitted {
            let ok = match tx {
                Tx::Commit(c) => {
                    window_oracle(Action::Commit, t0, dt, dv, dc, *now, 0)
                        && window_oracle(Action::Commit, t0, dt, dv, dc, c.commit_time, 0)
                }
                Tx::Reveal(_) => window_oracle(Action::Reveal, t0, dt, dv, dc, *now, 0),
                Tx::Validation(v) => {
                    vtime.insert(v.vid(), v.message_time);
                    window_oracle(Action::Validate, t0, dt, dv, dc, *now, 0)
                }
                Tx::Challenge(c) => window_oracle(Action::Challenge, t0, dt, dv, dc, *now, vtime[&c.vid]),
                _ => true,
            };
            prop_assert!(ok, "{} admitted at {} with windows {:?}", tx.kind(), now, h.windows);
        }
    }
}

#[test]
fn histories_are_not_trivial() {
    let kinds: std::collections::BTreeSet<&str> =
        (0..20).flat_map(|s| random_history(s).admitted.into_iter().map(|(_, tx)| tx.kind())).collect();
    for k in ["commit", "reveal", "validation", "challenge", "delivered", "settled"] {
        assert!(kinds.contains(k), "no admitted {k} in {kinds:?}");
    }
}
