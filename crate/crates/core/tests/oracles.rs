use std::f64::consts::PI;

use proptest::prelude::*;
use weakcalc::dirichlet::Dirichlet;
use weakcalc::exterior;
use weakcalc::lagrangian::{self, TransportOptions};
use weakcalc::{DiscreteSpace, ScalarField};

fn chart_fn(s: &DiscreteSpace, f: impl Fn(f64, f64) -> f64) -> ScalarField {
    ScalarField(s.chart().unwrap().iter().map(|p| f(p[0], p[1])).collect())
}

fn sup(a: &ScalarField, b: &ScalarField) -> f64 {
    a.0.iter().zip(&b.0).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Sum of embedded triangle areas computed from the vertex coordinates.
fn triangle_area_total(s: &DiscreteSpace) -> f64 {
    s.cells()
        .iter()
        .map(|c| {
            let v = c.vertices();
            let p: Vec<&[f64]> = v.iter().map(|&i| s.ambient_coords(i)).collect();
            let u: Vec<f64> = (0..3).map(|k| p[1][k] - p[0][k]).collect();
            let w: Vec<f64> = (0..3).map(|k| p[2][k] - p[0][k]).collect();
            let cross = [u[1] * w[2] - u[2] * w[1], u[2] * w[0] - u[0] * w[2], u[0] * w[1] - u[1] * w[0]];
            0.5 * cross.iter().map(|x| x * x).sum::<f64>().sqrt()
        })
        .sum()
}

#[test]
fn icosphere_mass_is_the_embedded_area() {
    let s = DiscreteSpace::build("icosphere:subdiv=0").unwrap();
    assert_eq!((s.n_vertices(), s.n_cells()), (12, 20));
    let area = triangle_area_total(&s);
    assert!((s.total_mass() - area).abs() < 1e-10 * area);
    let edge = 4.0 / (10.0 + 2.0 * 5f64.sqrt()).sqrt();
    assert!((area - 5.0 * 3f64.sqrt() * edge * edge).abs() < 1e-10);
    let fine = DiscreteSpace::build("icosphere:subdiv=1").unwrap();
    assert!((fine.total_mass() - 4.0 * PI).abs() < 0.15 * 4.0 * PI);
    let vm: f64 = s.vertex_mass().iter().sum();
    assert!((vm - s.total_mass()).abs() < 1e-12 * vm);
}

#[test]
fn cone_mass_is_the_embedded_area() {
    let s = DiscreteSpace::build("cone:angle=pi,n=8").unwrap();
    let area = triangle_area_total(&s);
    assert!((s.total_mass() - area).abs() < 1e-10 * area);
}

#[test]
fn laplacian_of_sine_converges_at_second_order() {
    let err = |n: usize| {
        let s = DiscreteSpace::build(&format!("flat_torus:n={n}")).unwrap();
        let d = Dirichlet::new(&s).unwrap();
        sup(&d.laplacian(&chart_fn(&s, |x, _| x.sin())), &chart_fn(&s, |x, _| -x.sin()))
    };
    let (e1, e2) = (err(16), err(32));
    let rate = (e1 / e2).log2();
    assert!(rate > 1.8, "errors {e1:e} {e2:e}, rate {rate}");
}

#[test]
fn heat_flow_of_an_eigenfunction_decays_exponentially() {
    let s = DiscreteSpace::build("flat_torus:n=32").unwrap();
    let d = Dirichlet::new(&s).unwrap();
    let f = chart_fn(&s, |x, y| x.sin() + (2.0 * y).cos());
    let t = 0.3;
    let exact = chart_fn(&s, |x, y| (-t as f64).exp() * x.sin() + (-4.0 * t as f64).exp() * (2.0 * y).cos());
    assert!(sup(&d.heat_flow(&f, t).unwrap(), &exact) < 0.02);
}

#[test]
fn heat_flow_preserves_mass_and_positivity() {
    let s = DiscreteSpace::build("icosphere:subdiv=2").unwrap();
    let d = Dirichlet::new(&s).unwrap();
    let mut f = ScalarField::zeros(&s);
    f.0[7] = 1.0 / s.vertex_mass()[7];
    let g = d.heat_flow(&f, 0.05).unwrap();
    assert!((g.integral(&s) - 1.0).abs() < 1e-10);
    assert!(g.0.iter().all(|x| *x >= -1e-12));
}

#[test]
fn betti_numbers_of_unions() {
    let two_tori = DiscreteSpace::build("flat_torus:n=6+flat_torus:n=6").unwrap();
    assert_eq!(exterior::betti(&two_tori).unwrap().harmonic, vec![2, 4, 2]);
    let mixed = DiscreteSpace::build("flat_torus:n=6+icosphere:subdiv=1").unwrap();
    assert_eq!(exterior::betti(&mixed).unwrap().harmonic, vec![2, 2, 2]);
}

#[test]
fn assignment_between_point_masses_is_the_squared_distance() {
    let s = DiscreteSpace::build("flat_torus:n=8").unwrap();
    let spacing = 2.0 * PI / 8.0;
    let (mut a, mut b) = (vec![0.0; 64], vec![0.0; 64]);
    a[0] = 1.0;
    b[3] = 1.0;
    let v = lagrangian::transport_lp(&s, &a, &b).unwrap();
    assert!((v - (3.0 * spacing).powi(2)).abs() < 1e-9, "{v}");
    assert!(lagrangian::transport_lp(&s, &a, &a).unwrap().abs() < 1e-12);
}

#[test]
fn dynamic_transport_of_a_static_measure_costs_nothing() {
    let s = DiscreteSpace::build("flat_torus:n=8").unwrap();
    let d = Dirichlet::new(&s).unwrap();
    let period = 2.0 * PI;
    let mu = lagrangian::chart_bump(&s, [PI, PI], 2.0, Some(period)).unwrap();
    let sol = lagrangian::benamou_brenier(&s, &d, &mu, &mu, TransportOptions { max_iter: 300, ..TransportOptions::default() }).unwrap();
    assert!(sol.value < 1e-6, "{}", sol.value);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn carre_du_champ_is_symmetric_bilinear(
        f in prop::collection::vec(-1.0f64..1.0, 36),
        g in prop::collection::vec(-1.0f64..1.0, 36),
        a in -3.0f64..3.0,
    ) {
        let s = DiscreteSpace::build("flat_torus:n=6").unwrap();
        let d = Dirichlet::new(&s).unwrap();
        let (f, g) = (ScalarField(f), ScalarField(g));
        let fg = d.carre_du_champ(&s, &f, &g);
        let gf = d.carre_du_champ(&s, &g, &f);
        prop_assert!(sup(&fg, &gf) < 1e-12);
        let lin = d.carre_du_champ(&s, &f.zip(&g, |x, y| a * x + y), &g);
        let expect = ScalarField(fg.0.iter().zip(&d.carre_du_champ(&s, &g, &g).0).map(|(x, y)| a * x + y).collect());
        prop_assert!(sup(&lin, &expect) < 1e-10);
        prop_assert!(d.carre_du_champ(&s, &f, &f).0.iter().all(|x| *x >= -1e-14));
        // integration by parts against the measure-valued Laplacian
        let lhs = fg.integral(&s);
        let rhs = -d.measure_laplacian(&g).integrate(&f);
        prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
    }
}
