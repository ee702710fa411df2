use super::*;
use crate::environment::TabulatedPath;
use crate::numerics::{stencil_derivative, RngStream};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn figure_params() -> ModelParams {
    // n = 3, lambda = 0.005, U = 10 U_c
    ModelParams::new(3, 0.005, 10.0 * 9.0 * 0.005 / 4.0, 0.1).unwrap()
}

fn linear_c(p: &ModelParams) -> f64 {
    (p.n as f64 * p.mu().powi(3)).sqrt()
}

fn random_times(count: usize, hi: f64, seed: u64) -> Vec<f64> {
    let mut rng = RngStream::new(seed, 0).rng();
    (0..count).map(|_| rng.random_range(0.0..hi)).collect()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn y2_examples() {
    let p = figure_params();
    let mu = p.mu();
    assert_eq!(y2(&p, 0.0), 0.0);
    assert!(close(y2(&p, 1e4 / mu), 1.0 / mu, 1e-12));
    let q = ModelParams::with_mu(3, 0.005, 0.0237168, 0.0).unwrap();
    let expected = (0.0237168f64 * 10.0).tanh() / 0.0237168;
    assert!(close(y2(&q, 10.0), expected, 1e-12), "{}", y2(&q, 10.0));
}

#[test]
fn y1_examples() {
    let p = figure_params();
    let mu = p.mu();
    let steady = EnvTrajectory::steady();
    let init = InitialCondition::Clonal;
    let m = AnalyticModel::new(p, &steady, &init).unwrap();
    for t in [0.0, 3.0, 400.0] {
        assert_eq!(m.y1(t, 0.0, 0.0).unwrap(), 0.0);
    }
    assert!(close(m.y1(0.0, 1.0, 0.0).unwrap(), 1.0, 1e-15));

    let c = linear_c(&p);
    let lin = EnvTrajectory::Linear { c };
    let m = AnalyticModel::new(p, &lin, &init).unwrap();
    for t in [1.0, 10.0, 100.0] {
        let exact = c / (mu * mu) * (1.0 - 1.0 / (mu * t).cosh());
        assert!(close(m.y1(0.0, t, t).unwrap(), exact, 1e-9), "t = {t}");
    }
    assert!(m.y1(1.0, -1.0, 0.0).is_err());
}

#[test]
fn y1_second_term_stays_finite_for_long_times() {
    let p = figure_params();
    let steady = EnvTrajectory::steady();
    let init = InitialCondition::Clonal;
    let m = AnalyticModel::new(p, &steady, &init).unwrap();
    let v = m.y1(25_000.0, 1e-3, 0.0).unwrap();
    assert!(v.is_finite() && v > 1e100);
}

#[test]
fn h_delta_examples() {
    let p = figure_params();
    let mu = p.mu();
    let init = InitialCondition::Clonal;
    let steady = EnvTrajectory::steady();
    let m = AnalyticModel::new(p, &steady, &init).unwrap();
    for t in [0.0, 1.0, 500.0] {
        assert_eq!(m.h_delta(t).unwrap(), 0.0);
    }

    let c = linear_c(&p);
    let lin = EnvTrajectory::Linear { c };
    let m = AnalyticModel::new(p, &lin, &init).unwrap();
    for t in [0.5, 5.0, 50.0] {
        let h = m.h_delta(t).unwrap();
        // independent oracle: antiderivative of u sinh(mu u)
        let direct =
            mu * c * (t * (mu * t).cosh() / mu - (mu * t).sinh() / (mu * mu)) / (mu * t).cosh();
        assert!(close(h, direct, 1e-12), "t = {t}");
        assert!(
            close(h - c * t, -(c / mu) * (mu * t).tanh(), 1e-12),
            "t = {t}"
        );
    }

    let (dm, w) = (0.7071068, 0.0745068);
    let sq = EnvTrajectory::SinSq {
        delta_max: dm,
        omega: w,
    };
    let m = AnalyticModel::new(p, &sq, &init).unwrap();
    for t in random_times(20, 500.0, 11) {
        let closed = dm
            * (0.5
                - (2.0 * w * mu * (2.0 * w * t).sin() * (mu * t).tanh()
                    + mu * mu * (2.0 * w * t).cos()
                    + 4.0 * w * w / (mu * t).cosh())
                    / (8.0 * w * w + 2.0 * mu * mu));
        assert!(close(m.h_delta(t).unwrap(), closed, 1e-8), "t = {t}");
    }
}

#[test]
fn h_delta_is_linear_in_delta() {
    let p = figure_params();
    let init = InitialCondition::Clonal;
    let (c, dm, w) = (0.004, 0.3, 0.05);
    let a = EnvTrajectory::Linear { c };
    let b = EnvTrajectory::Sin {
        delta_max: dm,
        omega: w,
    };
    let sum = EnvTrajectory::LinearPlusSin {
        c,
        delta_max: dm,
        omega: w,
    };
    let (ma, mb, ms) = (
        AnalyticModel::new(p, &a, &init).unwrap(),
        AnalyticModel::new(p, &b, &init).unwrap(),
        AnalyticModel::new(p, &sum, &init).unwrap(),
    );
    for t in random_times(20, 600.0, 3) {
        let lhs = ms.h_delta(t).unwrap();
        let rhs = ma.h_delta(t).unwrap() + mb.h_delta(t).unwrap();
        assert!(
            close(lhs, rhs, 2e-10 * (1.0 + lhs.abs())),
            "t = {t}: {lhs} vs {rhs}"
        );
    }
}

#[test]
fn gaussian_start_moments_at_time_zero() {
    // N(a e1, s I): mbar = -(a^2 + n s)/2, V_m = n s^2/2 + a^2 s
    let p = figure_params();
    let (a, s) = (0.05, 0.01);
    let ic = InitialCondition::IsotropicGaussian { a, sigma2: s };
    for traj in [
        EnvTrajectory::Linear { c: 0.002 },
        EnvTrajectory::LinearPlusSin {
            c: 0.002,
            delta_max: 0.1,
            omega: 0.1,
        },
        EnvTrajectory::Tabulated(
            TabulatedPath::new(vec![0.0, 0.1, 0.2], vec![0.0, 0.01, -0.01]).unwrap(),
        ),
    ] {
        let m = AnalyticModel::new(p, &traj, &ic).unwrap();
        assert!(close(m.mbar(0.0).unwrap(), -0.5 * (a * a + 3.0 * s), 1e-12));
        let vm = m.variance(0.0).unwrap();
        let exact = 1.5 * s * s + a * a * s;
        assert!(
            (vm - exact).abs() < 1e-6 * exact,
            "{traj:?}: {vm} vs {exact}"
        );
    }
}

#[test]
fn tabulated_variance_is_stable_at_nodes() {
    // a kink at every node: the value at a node must match the limit from
    // the right, not an average across the kink
    let p = figure_params();
    let times: Vec<f64> = (0..=40).map(|k| k as f64 * 0.5).collect();
    let values: Vec<f64> = times
        .iter()
        .map(|t| {
            if ((t * 2.0) as usize).is_multiple_of(2) {
                0.0
            } else {
                0.05
            }
        })
        .collect();
    let traj = EnvTrajectory::Tabulated(TabulatedPath::new(times, values).unwrap());
    let ic = InitialCondition::Clonal;
    let m = AnalyticModel::new(p, &traj, &ic).unwrap();
    for t in [5.0, 10.0, 15.5] {
        let at = m.variance(t).unwrap();
        let right = m.variance(t + 1e-3).unwrap();
        assert!(
            (at - right).abs() < 1e-3 * right,
            "t = {t}: {at} vs {right}"
        );
    }
}

#[test]
fn q_vanishes_at_origin() {
    let p = figure_params();
    let c = linear_c(&p);
    let init = InitialCondition::Dirac {
        x1_star: 0.2,
        norm2_star: 0.05,
    };
    for traj in [EnvTrajectory::Linear { c }, EnvTrajectory::steady()] {
        let m = AnalyticModel::new(p, &traj, &init).unwrap();
        for t in [0.0, 1.0, 250.0, 3000.0] {
            assert!(m.q_eval(t, 0.0, 0.0).unwrap().abs() <= 1e-12);
        }
    }
}

#[test]
fn q_eval_matches_offset_form() {
    let p = figure_params();
    let mu = p.mu();
    let traj = EnvTrajectory::Sin {
        delta_max: 0.39,
        omega: 0.07,
    };
    let init = InitialCondition::Clonal;
    let m = AnalyticModel::new(p, &traj, &init).unwrap();
    let (t, z, zt) = (40.0, 0.3, 0.1);
    let e = (z - zt) * (mu * (z + t)).cosh() / (mu * z).cosh();
    let a = m.q_eval(t, z, zt).unwrap();
    let b = m.q_offset(t, &[(z, e)]).unwrap()[0];
    assert!(close(a, b, 1e-14 * (1.0 + a.abs())));
}

#[test]
fn q_eval_reduces_to_initial_cgf_at_time_zero() {
    let p = figure_params();
    let mu = p.mu();
    let traj = EnvTrajectory::Linear { c: 0.01 };
    let init = InitialCondition::IsotropicGaussian {
        a: 0.1,
        sigma2: 0.02,
    };
    let m = AnalyticModel::new(p, &traj, &init).unwrap();
    let (z, zt) = (0.5, 0.2);
    // phi_0(z, z~) = (y1(0, z, z~), y2(z))
    let y1 = m.y1(0.0, z, zt).unwrap();
    let expected = init.c0(3, y1, (mu * z).tanh() / mu);
    assert!(close(m.q_eval(0.0, z, zt).unwrap(), expected, 1e-13));
}

#[test]
fn steady_clonal_gradient_gives_mutation_load_transient() {
    let p = figure_params();
    let mu = p.mu();
    let steady = EnvTrajectory::steady();
    let init = InitialCondition::Clonal;
    let m = AnalyticModel::new(p, &steady, &init).unwrap();
    for t in [0.0, 10.0, 100.0, 1000.0] {
        let r_z = m.q_partials(t).unwrap().r_z;
        assert!(
            close(r_z, -mu * 1.5 * (mu * t).tanh(), 1e-6),
            "t = {t}: {r_z}"
        );
    }
}

#[test]
fn stencil_mean_matches_closed_form_linear() {
    let p = figure_params();
    let c = linear_c(&p);
    let lin = EnvTrajectory::Linear { c };
    let init = InitialCondition::Clonal;
    let m = AnalyticModel::new(p, &lin, &init).unwrap();
    let a = m.mbar_from_q(200.0).unwrap();
    let b = m.mbar(200.0).unwrap();
    assert!(close(a, b, 1e-6), "{a} vs {b}");
}

#[test]
fn mbar_examples() {
    let p = figure_params();
    let mu = p.mu();
    let init = InitialCondition::Clonal;
    let steady = EnvTrajectory::steady();
    let m = AnalyticModel::new(p, &steady, &init).unwrap();
    assert!(close(m.mbar(1000.0).unwrap(), -1.5 * mu, 1e-6));
    assert!((m.mbar(1000.0).unwrap() + 0.0355752).abs() < 1e-6);

    let c = linear_c(&p);
    let lin = EnvTrajectory::Linear { c };
    let m = AnalyticModel::new(p, &lin, &init).unwrap();
    assert_eq!(m.mbar(0.0).unwrap(), 0.0);
    let limit = -1.5 * mu - c * c / (2.0 * mu * mu);
    assert!(close(m.mbar(2000.0).unwrap(), limit, 1e-8));
    assert!((limit + 0.0711503).abs() < 2e-6);
}

#[test]
fn sin_mean_fitness_matches_explicit_formula() {
    let p = figure_params();
    let mu = p.mu();
    let (dm, w) = ((31.0f64 * 0.005).sqrt(), mu * std::f64::consts::PI);
    let traj = EnvTrajectory::Sin {
        delta_max: dm,
        omega: w,
    };
    let init = InitialCondition::Clonal;
    let m = AnalyticModel::new(p, &traj, &init).unwrap();
    for t in random_times(20, 800.0, 5) {
        let amp = dm * w / (w * w + mu * mu);
        let lag = amp * (w * (w * t).sin() + mu * (w * t).cos() * (mu * t).tanh());
        let exact = -1.5 * mu * (mu * t).tanh() - 0.5 * lag * lag;
        assert!(close(m.mbar(t).unwrap(), exact, 1e-9), "t = {t}");
    }
}

#[test]
fn variance_and_skewness_limits_linear() {
    let p = figure_params();
    let mu = p.mu();
    let c = linear_c(&p);
    let lin = EnvTrajectory::Linear { c };
    let init = InitialCondition::Clonal;
    let m = AnalyticModel::new(p, &lin, &init).unwrap();
    let AsymptoticSummary::Linear {
        vm_inf, skew_inf, ..
    } = asymptotic_summary(&p, &lin).unwrap()
    else {
        panic!("wrong summary variant");
    };
    assert!(close(vm_inf, mu * mu * 1.5 + c * c / mu, 1e-15));
    let mo = m.moments(2000.0).unwrap();
    assert!(
        (mo.vm / vm_inf - 1.0).abs() < 5e-3,
        "vm {} vs {vm_inf}",
        mo.vm
    );
    assert!(
        (mo.skew / skew_inf - 1.0).abs() < 1e-2,
        "skew {} vs {skew_inf}",
        mo.skew
    );
}

#[test]
fn variance_and_skewness_limits_steady() {
    let p = figure_params();
    let mu = p.mu();
    let steady = EnvTrajectory::steady();
    let init = InitialCondition::Clonal;
    let m = AnalyticModel::new(p, &steady, &init).unwrap();
    let mo = m.moments(1500.0).unwrap();
    let v = mu * mu * 1.5;
    assert!((mo.vm / v - 1.0).abs() < 1e-3, "{}", mo.vm);
    let s = -mu.powi(3) * 3.0 / v.powf(1.5);
    assert!((mo.skew / s - 1.0).abs() < 1e-2, "{} vs {s}", mo.skew);
}

#[test]
fn skewness_undefined_for_clonal_start() {
    let p = figure_params();
    let steady = EnvTrajectory::steady();
    let init = InitialCondition::Clonal;
    let m = AnalyticModel::new(p, &steady, &init).unwrap();
    assert!(matches!(m.skewness(0.0), Err(Error::ZeroVariance { .. })));
    assert_eq!(m.variance(0.0).unwrap(), 0.0);
    assert!(m.moments(0.0).unwrap().skew.is_nan());
}

#[test]
fn steady_clonal_variance_matches_sampled_population() {
    // Independent oracle: in a static environment the clonal population is
    // Gaussian with per-trait variance mu tanh(mu t) (diffusion around the
    // optimum), so fitness -|x|^2/2 is a scaled chi-square with n dof.
    let p = figure_params();
    let mu = p.mu();
    let steady = EnvTrajectory::steady();
    let init = InitialCondition::Clonal;
    let m = AnalyticModel::new(p, &steady, &init).unwrap();
    for t in [5.0, 60.0, 5.0 / mu] {
        let s2 = mu * (mu * t).tanh();
        let mo = m.moments(t).unwrap();
        assert!(close(mo.mbar, -1.5 * s2, 1e-9));
        assert!((mo.vm / (1.5 * s2 * s2) - 1.0).abs() < 1e-4, "t = {t}");
        // skewness of -chi2_3 scaled: -sqrt(8/3)
        assert!(
            (mo.skew + (8.0f64 / 3.0).sqrt()).abs() < 1e-2,
            "t = {t}: {}",
            mo.skew
        );
    }
}

#[test]
fn oracle_equivalence_for_closed_form_variants() {
    let p = figure_params();
    let mu = p.mu();
    let c = linear_c(&p);
    let w = mu * std::f64::consts::PI;
    let init = InitialCondition::Clonal;
    let variants = [
        EnvTrajectory::Linear { c },
        EnvTrajectory::power(c, 0.5).unwrap(),
        EnvTrajectory::power(c, 1.5).unwrap(),
        EnvTrajectory::Sin {
            delta_max: 0.3937,
            omega: w,
        },
        EnvTrajectory::SinSq {
            delta_max: 0.7071,
            omega: w,
        },
        EnvTrajectory::LinearPlusSin {
            c,
            delta_max: 0.3937,
            omega: w,
        },
    ];
    for (i, traj) in variants.iter().enumerate() {
        let m = AnalyticModel::new(p, traj, &init).unwrap();
        for t in random_times(6, 300.0, 100 + i as u64) {
            let a = m.mbar_from_q(t).unwrap();
            let b = m.mbar(t).unwrap();
            assert!(close(a, b, 1e-6), "{} t = {t}: {a} vs {b}", traj.name());
        }
    }
}

#[test]
fn mean_fitness_is_monotone_in_static_environment() {
    let p = figure_params();
    let mu = p.mu();
    let steady = EnvTrajectory::steady();
    let init = InitialCondition::Clonal;
    let m = AnalyticModel::new(p, &steady, &init).unwrap();
    let mut prev = m.mbar(0.0).unwrap();
    for k in 1..200 {
        let v = m.mbar(k as f64 * 10.0).unwrap();
        assert!(v <= prev && v >= -1.5 * mu);
        prev = v;
    }
}

#[test]
fn initial_condition_split() {
    let p = figure_params();
    let d = 0.25;
    let steady = EnvTrajectory::steady();
    let dirac = InitialCondition::dirac_at(&[d, 0.0, 0.0]);
    let m = AnalyticModel::new(p, &steady, &dirac).unwrap();
    assert_eq!(m.mbar(0.0).unwrap(), -d * d / 2.0);
    for t in [0.0, 3.0, 50.0, 400.0] {
        let total = m.mbar(t).unwrap();
        let split = m.mbar_clonal(t).unwrap() + m.r0_prime(t).unwrap();
        assert!(close(total, split, 1e-15));
        assert!(close(m.mbar_from_q(t).unwrap(), total, 1e-6), "t = {t}");
    }
    // moving optimum: the stencil path sees the initial condition too
    let lin = EnvTrajectory::Linear { c: 0.005 };
    let m = AnalyticModel::new(p, &lin, &dirac).unwrap();
    for t in [2.0, 120.0] {
        assert!(close(m.mbar_from_q(t).unwrap(), m.mbar(t).unwrap(), 1e-6));
    }
}

#[test]
fn dirac_initial_variance_is_zero_then_grows() {
    let p = figure_params();
    let steady = EnvTrajectory::steady();
    let dirac = InitialCondition::dirac_at(&[0.3, 0.1, 0.0]);
    let m = AnalyticModel::new(p, &steady, &dirac).unwrap();
    assert!(m.variance(0.0).unwrap() < 1e-10);
    assert!(m.variance(20.0).unwrap() > 1e-5);
}

#[test]
fn custom_initial_condition_matches_dirac() {
    let p = figure_params();
    let (x1, r2) = (0.2, 0.06);
    let dirac = InitialCondition::Dirac {
        x1_star: x1,
        norm2_star: r2,
    };
    let custom = InitialCondition::Custom(CustomCgf::new(move |z1, z2| z1 * x1 - z2 * r2 / 2.0));
    let lin = EnvTrajectory::Linear { c: 0.004 };
    let a = AnalyticModel::new(p, &lin, &dirac).unwrap();
    let b = AnalyticModel::new(p, &lin, &custom).unwrap();
    for t in [0.0, 7.0, 300.0] {
        assert!(close(a.mbar(t).unwrap(), b.mbar(t).unwrap(), 1e-9));
    }
}

#[test]
fn gaussian_cgf_matches_monte_carlo() {
    let (n, a, s2) = (3usize, 0.3, 0.04);
    let init = InitialCondition::IsotropicGaussian { a, sigma2: s2 };
    let samples = 1_000_000;
    let mut rng = RngStream::new(42, 0).rng();
    let xs: Vec<[f64; 3]> = (0..samples)
        .map(|_| {
            let g = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
            [
                a + s2.sqrt() * g(&mut rng),
                s2.sqrt() * g(&mut rng),
                s2.sqrt() * g(&mut rng),
            ]
        })
        .collect();
    let mut pts = RngStream::new(43, 0).rng();
    for _ in 0..10 {
        let z1 = pts.random_range(-2.0..2.0);
        let z2 = pts.random_range(0.0..3.0);
        let vals: Vec<f64> = xs
            .iter()
            .map(|x| (z1 * x[0] - z2 * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / 2.0).exp())
            .collect();
        let mean = vals.iter().sum::<f64>() / samples as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (samples - 1) as f64;
        // delta method: se of ln(mean)
        let se = (var / samples as f64).sqrt() / mean;
        let c0 = init.c0(n, z1, z2);
        assert!(
            (c0 - mean.ln()).abs() < 3.0 * se + 1e-12,
            "({z1}, {z2}): {c0} vs {}",
            mean.ln()
        );
    }
}

#[test]
fn gaussian_grad_matches_finite_differences() {
    let init = InitialCondition::IsotropicGaussian {
        a: -0.4,
        sigma2: 0.3,
    };
    for (z1, z2) in [(0.0, 0.0), (0.7, 1.2), (-1.0, 0.4)] {
        let (d1, d2) = init.grad(3, z1, z2);
        let f1 = stencil_derivative(|x| Ok(init.c0(3, x, z2)), z1, Order::First, 1e-3).unwrap();
        let f2 = stencil_derivative(|x| Ok(init.c0(3, z1, x)), z2, Order::First, 1e-3).unwrap();
        assert!(close(d1, f1, 1e-9) && close(d2, f2, 1e-9));
    }
    assert_eq!(init.c0(3, 0.0, 0.0), 0.0);
    // sigma2 -> 0 gives the Dirac form
    let g = InitialCondition::IsotropicGaussian {
        a: 0.5,
        sigma2: 0.0,
    };
    let d = InitialCondition::Dirac {
        x1_star: 0.5,
        norm2_star: 0.25,
    };
    assert!(close(g.c0(3, 0.3, 0.8), d.c0(3, 0.3, 0.8), 1e-15));
}

#[test]
fn invalid_initial_conditions_rejected() {
    assert!(InitialCondition::Dirac {
        x1_star: 1.0,
        norm2_star: 0.5
    }
    .validate()
    .is_err());
    assert!(InitialCondition::IsotropicGaussian {
        a: 0.0,
        sigma2: -1.0
    }
    .validate()
    .is_err());
}

#[test]
fn variance_positive_at_tested_points() {
    let p = figure_params();
    let c = linear_c(&p);
    let init = InitialCondition::Clonal;
    for traj in [
        EnvTrajectory::Linear { c },
        EnvTrajectory::Sin {
            delta_max: 0.39,
            omega: 0.0745,
        },
    ] {
        let m = AnalyticModel::new(p, &traj, &init).unwrap();
        for t in [1.0, 37.0, 150.0, 600.0] {
            assert!(m.variance(t).unwrap() > 0.0);
        }
    }
}

#[test]
fn stencil_partials_stable_under_half_step() {
    let p = figure_params();
    let c = linear_c(&p);
    let lin = EnvTrajectory::LinearPlusSin {
        c,
        delta_max: 0.39,
        omega: 0.0745,
    };
    let init = InitialCondition::Clonal;
    let m = AnalyticModel::new(p, &lin, &init).unwrap();
    let full = StencilSteps::default();
    let half = StencilSteps {
        first: full.first / 2.0,
        third: full.third / 2.0,
    };
    for t in [30.0, 400.0] {
        let a = m.q_partials_with_steps(t, full).unwrap();
        let b = m.q_partials_with_steps(t, half).unwrap();
        // truncation error of the stencils: O(h^4) (Richardson) and O(h^2)
        let scale = |x: f64| 1.0 + x.abs();
        assert!((a.r_z - b.r_z).abs() < 1e-8 * scale(a.r_z), "{a:?} {b:?}");
        assert!((a.q_zt - b.q_zt).abs() < 1e-8 * scale(a.q_zt));
        assert!((a.r_zz - b.r_zz).abs() < 1e-6 * scale(a.r_zz));
        assert!((a.q_mixed - b.q_mixed).abs() < 1e-6 * scale(a.q_mixed));
        assert!(
            (a.r_zzz - b.r_zzz).abs() < 1e-5 * scale(a.r_zzz),
            "{} {}",
            a.r_zzz,
            b.r_zzz
        );
    }
}

#[test]
fn tabulated_linear_path_reproduces_closed_form() {
    let p = figure_params();
    let c = 0.006;
    let times: Vec<f64> = (0..=3000).map(|k| k as f64 * 0.5).collect();
    let values: Vec<f64> = times.iter().map(|t| c * t).collect();
    let tab = EnvTrajectory::Tabulated(TabulatedPath::new(times, values).unwrap());
    let lin = EnvTrajectory::Linear { c };
    let init = InitialCondition::Clonal;
    let a = AnalyticModel::new(p, &tab, &init).unwrap();
    let b = AnalyticModel::new(p, &lin, &init).unwrap();
    for t in [0.0, 0.3, 17.25, 900.0, 1500.0] {
        assert!(close(a.h_delta(t).unwrap(), b.h_delta(t).unwrap(), 1e-10));
        assert!(close(a.mbar(t).unwrap(), b.mbar(t).unwrap(), 1e-10));
    }
    assert!(close(
        a.mbar_from_q(600.0).unwrap(),
        b.mbar(600.0).unwrap(),
        1e-6
    ));
    assert!(matches!(a.mbar(1500.5), Err(Error::OutOfHorizon { .. })));
    let pts = [(0.0, 0.01), (0.01, 0.0), (0.02, -0.01), (-0.005, 0.003)];
    for t in [0.25, 33.3, 600.0, 1400.0] {
        let (qa, qb) = (a.q_offset(t, &pts).unwrap(), b.q_offset(t, &pts).unwrap());
        for (x, y) in qa.iter().zip(&qb) {
            assert!(
                (x - y).abs() < 1e-10 * (1e-3 + y.abs()),
                "t {t}: {x} vs {y}"
            );
        }
    }
    let (va, vb) = (a.variance(600.0).unwrap(), b.variance(600.0).unwrap());
    assert!(close(va, vb, 1e-6), "{va} vs {vb}");
    let (sa, sb) = (a.skewness(600.0).unwrap(), b.skewness(600.0).unwrap());
    assert!(close(sa, sb, 1e-4), "{sa} vs {sb}");
}

#[test]
fn look_back_sums_match_segment_walk() {
    let p = figure_params();
    let mu = p.mu();
    let mut rng = RngStream::new(31, 0).rng();
    let times: Vec<f64> = (0..=400).map(|k| k as f64 * 0.7).collect();
    let mut values: Vec<f64> = (0..=400).map(|_| rng.random_range(-0.5..0.5)).collect();
    values[0] = 0.0;
    let traj = EnvTrajectory::Tabulated(TabulatedPath::new(times.clone(), values.clone()).unwrap());
    let init = InitialCondition::Clonal;
    let m = AnalyticModel::new(p, &traj, &init).unwrap();
    for t in [0.0, 0.35, 7.0, 123.4, 280.0] {
        let lb = LookBack::new(&times, &values, t, mu);
        for s in [0.0, 0.2, 0.5 * t, t] {
            let [ic, is] = m
                .delta_integrals(t - s, t, |u| {
                    let v = mu * (t - u);
                    [cosh_over_cosh(v, mu * s), sinh_over_cosh(v, mu * s)]
                })
                .unwrap();
            let (fc, fs) = lb.integrals(s);
            assert!(
                (fc - ic).abs() < 1e-13 * (1.0 + ic.abs()),
                "t {t} s {s}: {fc} vs {ic}"
            );
            assert!(
                (fs - is).abs() < 1e-13 * (1.0 + is.abs()),
                "t {t} s {s}: {fs} vs {is}"
            );
        }
    }
}

#[test]
fn sin_becomes_periodic() {
    let p = figure_params();
    let mu = p.mu();
    let w = mu * std::f64::consts::PI;
    let traj = EnvTrajectory::Sin {
        delta_max: 0.3937,
        omega: w,
    };
    let init = InitialCondition::Clonal;
    let m = AnalyticModel::new(p, &traj, &init).unwrap();
    let period = std::f64::consts::PI / w;
    let gap = |t: f64| (m.mbar(t + period).unwrap() - m.mbar(t).unwrap()).abs();
    assert!(gap(1000.0) < gap(20.0));
    assert!(gap(1000.0) < 1e-12);
}

#[test]
fn asymptotic_summary_examples() {
    let p = figure_params();
    let mu = p.mu();
    let lin0 = asymptotic_summary(&p, &EnvTrajectory::Linear { c: 0.0 }).unwrap();
    let AsymptoticSummary::Linear {
        mbar_inf, mu_star, ..
    } = lin0
    else {
        panic!()
    };
    assert!(close(mbar_inf, -1.5 * mu, 1e-16));
    assert_eq!(mu_star, 0.0);

    let q = ModelParams::with_mu(3, 0.005, 0.0237168, 0.0).unwrap();
    let sin = EnvTrajectory::Sin {
        delta_max: 0.393700,
        omega: 0.0745068,
    };
    let s = asymptotic_summary(&q, &sin).unwrap();
    assert!((s.long_run_mbar().unwrap() + 0.0707617).abs() < 5e-6);

    let sub = asymptotic_summary(&p, &EnvTrajectory::power(1.0, 0.5).unwrap()).unwrap();
    assert_eq!(sub.long_run_mbar(), Some(-1.5 * mu));
    let sup = asymptotic_summary(&p, &EnvTrajectory::power(1.0, 1.5).unwrap()).unwrap();
    assert!(matches!(
        sup,
        AsymptoticSummary::Power {
            mbar_inf: Limit::NegInfinity,
            vm_inf: Limit::PosInfinity,
            unbounded: true
        }
    ));

    let (c, dm, w) = (0.006, 0.39, 0.07);
    let both = asymptotic_summary(
        &p,
        &EnvTrajectory::LinearPlusSin {
            c,
            delta_max: dm,
            omega: w,
        },
    )
    .unwrap();
    let expected =
        -1.5 * mu - c * c / (2.0 * mu * mu) - dm * dm * w * w / (4.0 * (w * w + mu * mu));
    assert!(close(both.long_run_mbar().unwrap(), expected, 1e-15));

    let tab = EnvTrajectory::Tabulated(TabulatedPath::new(vec![0.0, 1.0], vec![0.0, 1.0]).unwrap());
    assert!(matches!(
        asymptotic_summary(&p, &tab),
        Err(Error::UnsupportedVariant(_))
    ));
}

#[test]
fn critical_speed_examples() {
    let q = ModelParams::with_mu(3, 0.005, 0.0237168, 0.1).unwrap();
    let cs = critical_speed(&q);
    assert!(!cs.never_persists);
    assert!((cs.c_star - 0.0085127).abs() < 1e-6, "{}", cs.c_star);
    assert_eq!(critical_speed_with_fluctuations(&q, 0.0, 0.3), cs);

    let edge = ModelParams::with_mu(3, 0.005, 0.02, 0.03).unwrap();
    assert!(critical_speed(&edge).c_star.abs() < 1e-9);
    let dead = ModelParams::with_mu(3, 0.005, 0.02, 0.01).unwrap();
    assert!(critical_speed(&dead).never_persists);
    assert_eq!(critical_speed(&dead).c_star, 0.0);
}

#[test]
fn critical_speed_locates_sign_change() {
    let p = figure_params();
    let cs = critical_speed(&p).c_star;
    let growth = |c: f64| {
        p.r_max
            + asymptotic_summary(&p, &EnvTrajectory::Linear { c })
                .unwrap()
                .long_run_mbar()
                .unwrap()
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if growth(mid) > 0.0 {
            lo = mid
        } else {
            hi = mid
        }
    }
    assert!(((lo + hi) / 2.0 / cs - 1.0).abs() < 1e-9);
}

#[test]
fn logistic_decay_closed_form() {
    let times: Vec<f64> = (0..=2000).map(|k| k as f64 * 0.05).collect();
    let rho0 = 0.8;
    let s = integrate_logistic(&times, rho0, DEFAULT_RHO_FLOOR, |_| Ok(0.0)).unwrap();
    for (t, r) in s.times.iter().zip(&s.rho) {
        assert!(
            close(*r, rho0 / (1.0 + rho0 * t), 1e-6),
            "t = {t}: {r} vs {}",
            rho0 / (1.0 + rho0 * t)
        );
    }
    assert!(!s.extinct());
}

#[test]
fn logistic_rejects_coarse_grid() {
    let times = vec![0.0, 50.0];
    let r = integrate_logistic(&times, 1.0, DEFAULT_RHO_FLOOR, |_| Ok(-1.0));
    assert!(matches!(r, Err(Error::StepFailure { .. })));
}

#[test]
fn persistence_in_static_environment() {
    let p = figure_params();
    let mu = p.mu();
    let steady = EnvTrajectory::steady();
    let init = InitialCondition::Clonal;
    let m = AnalyticModel::new(p, &steady, &init).unwrap();
    let times: Vec<f64> = (0..=2000).map(|k| k as f64).collect();
    let s = m.persistence_rho(&times, 0.01, DEFAULT_RHO_FLOOR).unwrap();
    assert!(close(*s.rho.last().unwrap(), p.r_max - 1.5 * mu, 1e-6));
}

#[test]
fn persistence_fails_just_above_critical_speed() {
    let p = figure_params();
    let cs = critical_speed(&p).c_star;
    let init = InitialCondition::Clonal;
    let times: Vec<f64> = (0..=3000).map(|k| k as f64 * 4.0).collect();
    let above = EnvTrajectory::Linear { c: 1.1 * cs };
    let m = AnalyticModel::new(p, &above, &init).unwrap();
    assert!(m
        .persistence_rho(&times, 0.05, DEFAULT_RHO_FLOOR)
        .unwrap()
        .extinct());
    let below = EnvTrajectory::Linear { c: 0.9 * cs };
    let m = AnalyticModel::new(p, &below, &init).unwrap();
    assert!(!m
        .persistence_rho(&times, 0.05, DEFAULT_RHO_FLOOR)
        .unwrap()
        .extinct());
}

#[test]
fn trajectory_matches_pointwise_calls() {
    let p = figure_params();
    let c = linear_c(&p);
    let lin = EnvTrajectory::Linear { c };
    let init = InitialCondition::Clonal;
    let m = AnalyticModel::new(p, &lin, &init).unwrap();
    let times = [0.0, 10.0, 250.0];
    let tr = m.trajectory(&times, &TrajectoryOptions::default()).unwrap();
    assert_eq!(tr.source, Source::Analytic);
    assert_eq!(tr.mbar[0], 0.0);
    for (i, &t) in times.iter().enumerate() {
        assert_eq!(tr.mbar[i], m.mbar(t).unwrap());
        if i > 0 {
            assert_eq!(tr.vm[i], m.variance(t).unwrap());
            assert_eq!(tr.skew[i], m.skewness(t).unwrap());
        }
    }
    let single = m
        .trajectory(
            &[0.0],
            &TrajectoryOptions {
                higher_moments: false,
                ..Default::default()
            },
        )
        .unwrap();
    assert_eq!(single.mbar, vec![0.0]);
    assert!(m
        .trajectory(&[5.0, 1.0], &TrajectoryOptions::default())
        .is_err());
}

#[test]
fn trajectory_with_density() {
    let p = figure_params();
    let steady = EnvTrajectory::steady();
    let init = InitialCondition::Clonal;
    let m = AnalyticModel::new(p, &steady, &init).unwrap();
    let times: Vec<f64> = (0..=100).map(|k| k as f64).collect();
    let tr = m
        .trajectory(
            &times,
            &TrajectoryOptions {
                higher_moments: false,
                rho0: Some(0.05),
                ..Default::default()
            },
        )
        .unwrap();
    let rho = tr.rho.unwrap();
    assert_eq!(rho.len(), times.len());
    assert_eq!(rho[0], 0.05);
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn q_origin_is_zero(t in 0.0f64..2000.0, c in -0.02f64..0.02, x1 in -0.5f64..0.5) {
            let p = figure_params();
            let traj = EnvTrajectory::Linear { c };
            let init = InitialCondition::Dirac { x1_star: x1, norm2_star: x1 * x1 + 0.01 };
            let m = AnalyticModel::new(p, &traj, &init).unwrap();
            prop_assert!(m.q_eval(t, 0.0, 0.0).unwrap().abs() <= 1e-12);
        }

        #[test]
        fn steady_mean_fitness_bounded_by_load(t in 0.0f64..5000.0) {
            let p = figure_params();
            let steady = EnvTrajectory::steady();
            let init = InitialCondition::Clonal;
            let m = AnalyticModel::new(p, &steady, &init).unwrap();
            let v = m.mbar(t).unwrap();
            prop_assert!(v <= 0.0 && v >= -1.5 * p.mu());
        }

        #[test]
        fn split_holds_for_random_dirac(d in -0.6f64..0.6, t in 0.0f64..800.0, c in 0.0f64..0.01) {
            let p = figure_params();
            let traj = EnvTrajectory::Linear { c };
            let init = InitialCondition::dirac_at(&[d, 0.1, 0.0]);
            let m = AnalyticModel::new(p, &traj, &init).unwrap();
            let total = m.mbar(t).unwrap();
            let split = m.mbar_clonal(t).unwrap() + m.r0_prime(t).unwrap();
            prop_assert!((total - split).abs() < 1e-12);
        }

        #[test]
        fn h_delta_linearity(t in 0.0f64..1000.0, c in -0.02f64..0.02, dm in 0.0f64..1.0, w in 0.01f64..0.2) {
            let p = figure_params();
            let init = InitialCondition::Clonal;
            let a = EnvTrajectory::Linear { c };
            let b = EnvTrajectory::Sin { delta_max: dm, omega: w };
            let s = EnvTrajectory::LinearPlusSin { c, delta_max: dm, omega: w };
            let h = |tr: &EnvTrajectory| AnalyticModel::new(p, tr, &init).unwrap().h_delta(t).unwrap();
            let (ha, hb, hs) = (h(&a), h(&b), h(&s));
            prop_assert!((hs - ha - hb).abs() < 1e-9 * (1.0 + hs.abs()));
        }
    }
}
