use num_bigint::{BigInt, BigUint};
use num_traits::{ToPrimitive, Zero};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

use rtlat_core::{
    boxplot_data, check_deadline, completion_time, deadline_threshold, feasibility_report,
    histogram, overshoot, run_worker, schedule_next, summarize, Clock, LatencySample,
    SimulatedClock, Statistic, Summarizer, TaskSpec, TimeNs,
};

fn series(values: &[u64]) -> Vec<LatencySample> {
    values
        .iter()
        .enumerate()
        .map(|(i, v)| LatencySample { seq: i as u64, latency: TimeNs(*v) })
        .collect()
}

/// Exact mean and population variance as rationals, then rounded once.
fn bigint_mean_sigma(values: &[u64]) -> (f64, f64) {
    let n = BigInt::from(values.len());
    let sum: BigInt = values.iter().map(|v| BigInt::from(*v)).sum();
    // var = (n * sum(x^2) - sum(x)^2) / n^2, computed around the exact mean
    let sum_sq_dev: BigInt = values
        .iter()
        .map(|v| {
            let d = BigInt::from(*v) * &n - &sum;
            &d * &d
        })
        .sum();
    let n3 = &n * &n * &n;
    let mean = ratio_to_f64(&sum, &n);
    let var = ratio_to_f64(&sum_sq_dev, &n3);
    (mean, var.sqrt())
}

fn ratio_to_f64(num: &BigInt, den: &BigInt) -> f64 {
    if num.is_zero() {
        return 0.0;
    }
    // Scale so that the integer quotient carries ~80 significant bits.
    let shift = (den.bits() as i64 - num.bits() as i64 + 80).max(0) as u32;
    let q: BigInt = (num << shift) / den;
    q.to_f64().unwrap() / 2f64.powi(shift as i32)
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    if a == b {
        return true;
    }
    (a - b).abs() <= tol * a.abs().max(b.abs())
}

#[test]
fn completion_time_matches_bignum_sum() {
    let mut rng = seeded(7);
    for _ in 0..1000 {
        let f: u64 = rng.gen();
        let r: u64 = rng.gen();
        let oracle = BigUint::from(f) + BigUint::from(r);
        match completion_time(TimeNs(f), TimeNs(r)) {
            Ok(c) => assert_eq!(BigUint::from(c.as_ns()), oracle),
            Err(_) => assert!(oracle > BigUint::from(u64::MAX)),
        }
        let (f, r) = (f >> 2, r >> 2);
        let c = completion_time(TimeNs(f), TimeNs(r)).unwrap();
        assert_eq!(BigUint::from(c.as_ns()), BigUint::from(f) + BigUint::from(r));
        assert_eq!(c, completion_time(TimeNs(r), TimeNs(f)).unwrap());
    }
}

fn seeded(seed: u64) -> rand::rngs::StdRng {
    rand::rngs::StdRng::seed_from_u64(seed)
}

#[test]
fn feasibility_flips_exactly_at_deadline_minus_budget() {
    for (p, d, r) in [
        (1_000_000u64, 1_000_000u64, 500_000u64),
        (100_000_000, 100_000_000, 10_000_000),
        (1_000_000, 800_000, 799_999),
        (10, 10, 10),
    ] {
        let task = TaskSpec::new("scan", TimeNs(p), Some(TimeNs(d)), TimeNs(r)).unwrap();
        let edge = d - r;
        // Exhaustive around the edge, sparse below it.
        let lo = edge.saturating_sub(2_000);
        for f in (0..lo).step_by(997).chain(lo..=edge + 2_000) {
            let v = check_deadline(&task, TimeNs(f)).unwrap();
            assert_eq!(v.feasible, f <= edge, "p={p} d={d} r={r} f={f}");
        }
    }
}

#[test]
fn simulated_clock_is_drift_free() {
    struct GridCheck {
        inner: SimulatedClock,
        t0: u128,
        interval: u128,
        k: u128,
        off_grid: u64,
    }
    impl Clock for GridCheck {
        fn now(&mut self) -> rtlat_core::Result<TimeNs> {
            self.inner.now()
        }
        fn sleep_until(&mut self, deadline: TimeNs) -> rtlat_core::Result<()> {
            if deadline.as_ns() as u128 != self.t0 + self.k * self.interval {
                self.off_grid += 1;
            }
            self.k += 1;
            self.inner.sleep_until(deadline)
        }
    }
    let mut rng = seeded(11);
    for _ in 0..20 {
        let t0: u64 = rng.gen_range(0..1 << 40);
        let interval: u64 = rng.gen_range(1..5_000_000);
        let loops: u64 = rng.gen_range(0..20_000);
        let delays = (0..7).map(|_| TimeNs(rng.gen_range(0..3 * interval))).collect();
        let mut clock = GridCheck {
            inner: SimulatedClock::new(TimeNs::ZERO, delays),
            t0: t0 as u128,
            interval: interval as u128,
            k: 0,
            off_grid: 0,
        };
        let mut buf = Vec::with_capacity(loops as usize);
        let timing =
            run_worker(&mut clock, TimeNs(t0), TimeNs(interval), 0, loops, &mut buf).unwrap();
        assert_eq!(clock.off_grid, 0);
        let expect = BigUint::from(t0) + BigUint::from(interval) * BigUint::from(loops);
        assert_eq!(BigUint::from(timing.next_deadline.as_ns()), expect);
        assert_eq!(buf.len() as u64, loops);
        assert!(buf.iter().enumerate().all(|(i, s)| s.seq == i as u64));
    }
}

#[test]
fn repeated_schedule_next_matches_bignum() {
    let mut rng = seeded(3);
    for _ in 0..10 {
        let t0: u64 = rng.gen_range(0..1 << 50);
        let interval: u64 = rng.gen_range(1..1 << 20);
        let k: u64 = rng.gen_range(0..200_000);
        let mut t = TimeNs(t0);
        for _ in 0..k {
            t = schedule_next(t, TimeNs(interval)).unwrap();
        }
        assert_eq!(
            BigUint::from(t.as_ns()),
            BigUint::from(t0) + BigUint::from(interval) * BigUint::from(k)
        );
    }
}

#[test]
fn identical_traces_give_identical_series() {
    let trace: Vec<TimeNs> = (0..13).map(|i| TimeNs(i * 1_337)).collect();
    let run = || {
        let mut clock = SimulatedClock::new(TimeNs(0), trace.clone());
        let mut buf = Vec::with_capacity(5_000);
        let t = run_worker(&mut clock, TimeNs(1_000_000), TimeNs(1_000_000), 3, 5_000, &mut buf)
            .unwrap();
        (buf, t)
    };
    assert_eq!(run(), run());
}

#[test]
fn summarize_matches_two_pass_oracle() {
    let mut rng = seeded(1);
    for case in 0..300 {
        let n = rng.gen_range(1..2_000);
        let scale: u64 = [10, 1_000, 1_000_000, 1 << 40, u64::MAX][case % 5];
        let base: u64 = rng.gen_range(0..=scale / 2);
        let values: Vec<u64> = (0..n).map(|_| base + rng.gen_range(0..=scale / 2)).collect();
        let s = summarize(&series(&values)).unwrap();
        let (mean, sigma) = bigint_mean_sigma(&values);
        assert_eq!(s.min.as_ns(), *values.iter().min().unwrap());
        assert_eq!(s.max.as_ns(), *values.iter().max().unwrap());
        assert_eq!(s.n, n as u64);
        assert!(rel_close(s.mean_ns, mean, 1e-9), "mean {} vs {}", s.mean_ns, mean);
        assert!(rel_close(s.stddev_ns, sigma, 1e-9), "sigma {} vs {}", s.stddev_ns, sigma);
    }
}

proptest! {
    #[test]
    fn margin_decreases_by_exactly_delta(
        r in 1u64..1_000_000,
        extra in 0u64..1_000_000,
        f in 0u64..1 << 40,
        df in 1u64..1 << 20,
    ) {
        let d = r + extra;
        let task = TaskSpec::new("m", TimeNs(d), None, TimeNs(r)).unwrap();
        let a = check_deadline(&task, TimeNs(f)).unwrap();
        let b = check_deadline(&task, TimeNs(f + df)).unwrap();
        prop_assert_eq!(a.margin_ns - b.margin_ns, df as i128);
        prop_assert_eq!(a.feasible, a.completion_time <= task.deadline);
        // Feasibility is downward closed in f.
        if b.feasible {
            prop_assert!(a.feasible);
        }
    }

    #[test]
    fn threshold_of_ten_x_is_x(x in 1u64..u64::MAX / 10) {
        prop_assert_eq!(deadline_threshold(TimeNs(10 * x)), TimeNs(x));
    }

    #[test]
    fn merged_partials_equal_whole(
        values in proptest::collection::vec(0u64..1 << 45, 1..400),
        cut in 0usize..400,
    ) {
        let cut = cut.min(values.len());
        let whole = summarize(&series(&values)).unwrap();
        let mut a = Summarizer::new();
        a.extend(values[..cut].iter().map(|v| TimeNs(*v)));
        let mut b = Summarizer::new();
        b.extend(values[cut..].iter().map(|v| TimeNs(*v)));
        a.merge(&b);
        let merged = a.finish().unwrap();
        prop_assert_eq!(merged.n, whole.n);
        prop_assert_eq!(merged.min, whole.min);
        prop_assert_eq!(merged.max, whole.max);
        prop_assert_eq!(merged.mean_ns, whole.mean_ns);
        prop_assert!(rel_close(merged.stddev_ns, whole.stddev_ns, 1e-9));
    }

    #[test]
    fn summary_invariants(values in proptest::collection::vec(0u64..1 << 50, 1..300)) {
        let s = summarize(&series(&values)).unwrap();
        prop_assert!(s.min.as_ns() as f64 <= s.mean_ns && s.mean_ns <= s.max.as_ns() as f64);
        prop_assert!(s.stddev_ns >= 0.0);
        prop_assert_eq!(s.stddev_ns == 0.0, values.iter().all(|v| *v == values[0]));
    }

    #[test]
    fn overshoot_is_monotone_and_matches_filter(
        values in proptest::collection::vec(0u64..100_000, 1..500),
        t1 in 0u64..100_000,
        t2 in 0u64..100_000,
    ) {
        let s = series(&values);
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        let a = overshoot(&s, TimeNs(lo)).unwrap();
        let b = overshoot(&s, TimeNs(hi)).unwrap();
        prop_assert!(a.count >= b.count);
        prop_assert_eq!(a.count as usize, values.iter().filter(|v| **v > lo).count());
        prop_assert!(a.rate >= 0.0 && a.rate <= 1.0);
    }

    #[test]
    fn histogram_conserves_samples(
        values in proptest::collection::vec(0u64..50_000_000, 0..500),
        width in 1u64..10_000,
    ) {
        let h = histogram(&series(&values), TimeNs(width)).unwrap();
        prop_assert_eq!(h.total(), values.len() as u64);
    }

    #[test]
    fn max_feasible_implies_every_statistic_feasible(
        values in proptest::collection::vec(0u64..2_000_000, 1..200),
        r in 1u64..1_000_000,
        q in 0.0f64..=1.0,
    ) {
        let s = series(&values);
        let task = TaskSpec::new("c", TimeNs(2_000_000), None, TimeNs(r)).unwrap();
        let by_max = feasibility_report(&s, false, false, &task, Statistic::Max).unwrap();
        if by_max.feasible {
            for st in [Statistic::Mean, Statistic::Quantile(q)] {
                prop_assert!(feasibility_report(&s, false, false, &task, st).unwrap().feasible);
            }
        }
    }

    #[test]
    fn box_ordering(values in proptest::collection::vec(0u64..1_000_000, 1..300)) {
        let s = series(&values);
        let b = &boxplot_data(&[("p", &s)]).unwrap()[0];
        prop_assert!(b.q1_ns <= b.median_ns && b.median_ns <= b.q3_ns);
        prop_assert!(b.whisker_low_ns <= b.q1_ns && b.q3_ns <= b.whisker_high_ns);
        prop_assert!(b.min_ns as f64 <= b.whisker_low_ns);
        prop_assert!(b.whisker_high_ns <= b.max_ns as f64);
    }
}
