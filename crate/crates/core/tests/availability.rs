use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use proptest::prelude::*;
use taurus_core::availability::*;

fn rat(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

fn choose(n: u32, k: u32) -> BigInt {
    let mut c = BigInt::one();
    for i in 0..k {
        c = c * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    c
}

/// Direct rational evaluation of P(at least k of n down).
fn oracle(n: u32, k: u32, x: &BigRational) -> BigRational {
    let one = BigRational::one();
    let mut sum = BigRational::zero();
    for i in k..=n {
        let term = BigRational::from_integer(choose(n, i))
            * num_traits::pow(x.clone(), i as usize)
            * num_traits::pow(&one - x, (n - i) as usize);
        sum += term;
    }
    sum
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * b.abs().max(1e-300)
}

#[test]
fn exact_matches_rational_oracle() {
    let xs = [
        rat(15, 100),
        rat(5, 100),
        rat(1, 100),
        rat(1, 2),
        rat(0, 1),
        rat(1, 1),
    ];
    for s in table_schemes() {
        let Scheme::Quorum(q) = s else { continue };
        for x in &xs {
            let xf = x.to_f64().unwrap();
            let w = oracle(q.n, q.n - q.nw + 1, x).to_f64().unwrap();
            let r = oracle(q.n, q.n - q.nr + 1, x).to_f64().unwrap();
            assert!(close(p_write_exact(q, xf), w), "{q} write x={xf}");
            assert!(close(p_read_exact(q, xf), r), "{q} read x={xf}");
        }
    }
}

#[test]
fn six_four_write_at_fifteen_percent() {
    let q = QuorumConfig::new(6, 4, 3).unwrap();
    let exact = oracle(6, 3, &rat(15, 100)).to_f64().unwrap();
    // Direct summation gives 0.0473386; the published reference is 0.04736.
    assert!((exact - 0.0473386).abs() < 1e-7);
    assert!((exact - 0.04736).abs() < 5e-5);
    assert!(close(p_write_exact(q, 0.15), exact));
}

#[test]
fn read_examples() {
    let q31 = QuorumConfig::new(3, 3, 1).unwrap();
    assert!(close(p_read_exact(q31, 0.15), 3.375e-3));
    let q33 = QuorumConfig::new(3, 3, 3).unwrap();
    assert!(close(p_read_exact(q33, 0.3), p_write_exact(q33, 0.3)));
    let q63 = QuorumConfig::new(6, 4, 3).unwrap();
    assert_eq!(
        sci1(p_approx(Scheme::Quorum(q63), OpKind::Read, 0.05)),
        "9e-5"
    );
    assert_eq!(sci1(p_read_exact(q63, 0.05)), "9e-5");
    assert!((p_read_exact(q63, 0.05) - 1e-4).abs() < 2e-5);
}

#[test]
fn boundaries() {
    for s in table_schemes() {
        for op in [OpKind::Write, OpKind::Read] {
            assert_eq!(p_exact(s, op, 0.0), 0.0);
            if let Scheme::Quorum(_) = s {
                assert!(close(p_exact(s, op, 1.0), 1.0));
            }
        }
    }
    let t = Scheme::Taurus { pool: DEFAULT_POOL };
    assert_eq!(p_approx(t, OpKind::Write, 0.5), 0.0);
    assert!(p_exact(t, OpKind::Write, 0.15) < 1e-70);
}

#[test]
fn table_rows_are_strongly_consistent() {
    for s in table_schemes() {
        if let Scheme::Quorum(q) = s {
            assert!(q.strongly_consistent(), "{q}");
        }
    }
}

#[test]
fn zero_x_row_is_all_zero() {
    for c in table(&[0.0], 1000, 1) {
        assert_eq!(c.exact, 0.0);
        assert_eq!(c.approx, 0.0);
        assert_eq!(c.mc.unwrap().failures, 0);
    }
}

#[test]
fn monte_carlo_examples() {
    let q = Scheme::Quorum(QuorumConfig::new(6, 4, 3).unwrap());
    let e = monte_carlo(q, OpKind::Write, 0.15, 1_000_000, 11);
    assert!(e.within(
        p_write_exact(QuorumConfig::new(6, 4, 3).unwrap(), 0.15),
        3.0
    ));
    let t = Scheme::Taurus { pool: DEFAULT_POOL };
    let r = monte_carlo(t, OpKind::Read, 0.15, 1_000_000, 11);
    assert!(r.within(3.375e-3, 3.0));
    let w = monte_carlo(t, OpKind::Write, 0.15, 1_000_000, 11);
    assert_eq!(w.failures, 0);
}

#[test]
fn csv_has_every_cell() {
    let cells = table(&TABLE_XS, 0, 0);
    let csv = table_csv(&cells);
    assert_eq!(csv.lines().count(), 1 + 4 * 2 * 3);
    assert!(table_text(&cells).contains("Taurus"));
}

proptest! {
    #[test]
    fn exact_is_monotone_in_x(a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        for s in table_schemes() {
            for op in [OpKind::Write, OpKind::Read] {
                prop_assert!(p_exact(s, op, lo) <= p_exact(s, op, hi) + 1e-15);
            }
        }
    }

    #[test]
    fn approximation_within_half_for_small_x(x in 1e-6f64..=0.15) {
        for s in table_schemes() {
            for op in [OpKind::Write, OpKind::Read] {
                let exact = p_exact(s, op, x);
                let approx = p_approx(s, op, x);
                if let (Scheme::Taurus { .. }, OpKind::Write) = (s, op) {
                    prop_assert_eq!(approx, 0.0);
                    continue;
                }
                prop_assert!((approx - exact).abs() / exact <= 0.5, "{} {} x={}", s, op, x);
            }
        }
    }

    #[test]
    fn exact_agrees_with_oracle(n in 1u32..8, k in 1u32..8, num in 0i64..=1000) {
        prop_assume!(k <= n);
        let x = rat(num, 1000);
        let o = oracle(n, k, &x).to_f64().unwrap();
        prop_assert!((p_at_least(n, k, num as f64 / 1000.0) - o).abs() <= 1e-12);
    }
}
