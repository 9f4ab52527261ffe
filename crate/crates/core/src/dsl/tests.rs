use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::project::ImitationDataset;

fn p(text: &str) -> ProgramAst<f64> {
    parse(text).unwrap()
}

#[test]
fn parses_pid_node() {
    let prog = p("(pid 0 0.0 1.0 0.1 0.01)");
    assert_eq!(
        prog.outputs,
        vec![Expr::Pid(Pid {
            feature: 0,
            setpoint: 0.0,
            kp: 1.0,
            ki: 0.1,
            kd: 0.01
        })]
    );
}

#[test]
fn parses_clip_of_affine() {
    let prog = p("(clip (affine (0.5 -0.3) 0.1) -2 2)");
    assert_eq!(
        prog.outputs,
        vec![Expr::Clip {
            child: Box::new(Expr::Affine {
                weights: vec![0.5, -0.3],
                bias: 0.1
            }),
            lo: -2.0,
            hi: 2.0
        }]
    );
}

#[test]
fn pid_arity_error() {
    match parse::<f64>("(pid 0 0.0 1.0)") {
        Err(Error::Parse { pos, msg }) => {
            assert_eq!((pos.line, pos.col), (1, 1));
            assert!(msg.contains("arity"), "{msg}");
        }
        other => panic!("expected arity error, got {other:?}"),
    }
}

#[test]
fn feature_out_of_range_needs_obs_dim() {
    assert!(parse::<f64>("(feature 5)").is_ok());
    assert!(matches!(parse_for::<f64>("(feature 5)", 3), Err(Error::Parse { .. })));
    assert!(matches!(parse_for::<f64>("(affine (1 2) 0)", 3), Err(Error::Parse { .. })));
}

#[test]
fn comments_and_multiple_outputs() {
    let prog = p("# steering\n(const 0.5) # inline\n\n(feature 1)\n");
    assert_eq!(prog.outputs, vec![Expr::Const(0.5), Expr::Feature(1)]);
}

#[test]
fn printer_examples() {
    assert_eq!(pretty_print(&ProgramAst::constant(&[0.5])), "(const 0.5)\n");
    let leaf = ProgramAst::new(vec![Expr::Tree(TreeNode::Leaf(Leaf::Const(1.5)))]);
    assert_eq!(pretty_print(&leaf), "(tree (leaf 1.5))\n");
    assert_eq!(
        expr_to_string(&p("(pid 0 0 1 0.1 0.01)").outputs[0]),
        "(pid 0 0.0 1.0 0.1 0.01)"
    );
}

#[test]
fn f32_programs_parse_and_roundtrip() {
    let prog: ProgramAst<f32> = parse("(affine (0.1 0.2) 0.3)").unwrap();
    assert_eq!(parse::<f32>(&pretty_print(&prog)).unwrap(), prog);
}

fn arb_num() -> impl Strategy<Value = f64> {
    prop_oneof![
        prop::num::f64::NORMAL | prop::num::f64::ZERO | prop::num::f64::SUBNORMAL,
        -10.0f64..10.0,
    ]
}

fn arb_tree() -> impl Strategy<Value = TreeNode<f64>> {
    let leaf = prop_oneof![
        arb_num().prop_map(|c| TreeNode::Leaf(Leaf::Const(c))),
        (prop::collection::vec(arb_num(), 0..4), arb_num())
            .prop_map(|(weights, bias)| TreeNode::Leaf(Leaf::Affine { weights, bias })),
    ];
    leaf.prop_recursive(3, 16, 2, |inner| {
        (0usize..5, arb_num(), inner.clone(), inner).prop_map(|(feature, threshold, l, r)| TreeNode::Split {
            feature,
            threshold,
            left: Box::new(l),
            right: Box::new(r),
        })
    })
}

fn arb_expr() -> impl Strategy<Value = Expr<f64>> {
    let leaf = prop_oneof![
        arb_num().prop_map(Expr::Const),
        (0usize..8).prop_map(Expr::Feature),
        (prop::collection::vec(arb_num(), 0..4), arb_num()).prop_map(|(weights, bias)| Expr::Affine { weights, bias }),
        (0usize..8, arb_num(), arb_num(), arb_num(), arb_num()).prop_map(|(feature, setpoint, kp, ki, kd)| {
            Expr::Pid(Pid {
                feature,
                setpoint,
                kp,
                ki,
                kd,
            })
        }),
        arb_tree().prop_map(Expr::Tree),
    ];
    leaf.prop_recursive(4, 32, 3, |inner| {
        prop_oneof![
            (inner.clone(), -5.0f64..5.0, 0.001f64..5.0).prop_map(|(c, lo, w)| Expr::Clip {
                child: Box::new(c),
                lo,
                hi: lo + w
            }),
            (0usize..8, arb_num(), inner.clone(), inner.clone()).prop_map(|(feature, threshold, t, e)| Expr::If {
                feature,
                threshold,
                then: Box::new(t),
                otherwise: Box::new(e)
            }),
            prop::collection::vec(inner, 1..4).prop_map(Expr::Sum),
        ]
    })
}

fn arb_program() -> impl Strategy<Value = ProgramAst<f64>> {
    prop::collection::vec(arb_expr(), 1..3).prop_map(ProgramAst::new)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn parse_inverts_pretty_print(prog in arb_program()) {
        let text = pretty_print(&prog);
        let back = parse::<f64>(&text).unwrap();
        prop_assert_eq!(back, prog);
    }
}

#[test]
fn integral_term_accumulates() {
    let prog = p("(pid 0 1.0 0 1 0)");
    let mut st = ProgState::new(&prog);
    let mut outs = Vec::new();
    for _ in 0..3 {
        // error = 1 - 0 = 1
        let (u, next) = eval_step(&prog, &st, &[0.0], 0.1).unwrap();
        outs.push(u[0]);
        st = next;
    }
    let want = [0.1, 0.2, 0.3];
    for (o, w) in outs.iter().zip(want) {
        assert!((o - w).abs() < 1e-15, "{outs:?}");
    }
}

#[test]
fn derivative_only_pid_is_zero_on_constant_error() {
    let prog = p("(pid 0 0.0 0 0 3.0)");
    let mut st = ProgState::new(&prog);
    for _ in 0..4 {
        let (u, next) = eval_step(&prog, &st, &[0.7], 0.05).unwrap();
        assert_eq!(u[0], 0.0);
        st = next;
    }
}

#[test]
fn if_is_strict_less_than() {
    let prog = p("(if 0 0.5 (const 1) (const -1))");
    let st = ProgState::new(&prog);
    assert_eq!(eval_step(&prog, &st, &[0.4], 0.1).unwrap().0, vec![1.0]);
    assert_eq!(eval_step(&prog, &st, &[0.5], 0.1).unwrap().0, vec![-1.0]);
}

#[test]
fn nan_observation_rejected() {
    let prog = p("(const 1)");
    let st = ProgState::new(&prog);
    assert!(matches!(eval_step(&prog, &st, &[f64::NAN], 0.1), Err(Error::Contract(_))));
    let wrong = ProgState::with_slots(2);
    assert!(matches!(eval_step(&prog, &wrong, &[0.0], 0.1), Err(Error::Contract(_))));
}

#[test]
fn eval_is_pure() {
    let prog = p("(sum (pid 0 0.3 1 2 0.5) (pid 1 0 -1 0.5 0.1))");
    let (_, st) = eval_step(&prog, &ProgState::new(&prog), &[0.1, 0.2], 0.05).unwrap();
    let a = eval_step(&prog, &st, &[0.3, -0.2], 0.05).unwrap();
    let b = eval_step(&prog, &st, &[0.3, -0.2], 0.05).unwrap();
    assert_eq!(a, b);
}

/// Independent interpreter: mutable per-node accumulators, branch-free PID
/// arithmetic written out longhand.
fn reference_eval(e: &Expr<f64>, obs: &[f64], dt: f64, acc: &mut [(f64, Option<f64>)], k: &mut usize) -> f64 {
    match e {
        Expr::Const(c) => *c,
        Expr::Feature(i) => obs[*i],
        Expr::Affine { weights, bias } => {
            let mut s = *bias;
            for i in 0..weights.len() {
                s += weights[i] * obs[i];
            }
            s
        }
        Expr::Pid(pid) => {
            let slot = &mut acc[*k];
            *k += 1;
            let err = pid.setpoint - obs[pid.feature];
            slot.0 += err * dt;
            let prev = slot.1.replace(err).unwrap_or(err);
            pid.kp * err + pid.ki * slot.0 + pid.kd * ((err - prev) / dt)
        }
        Expr::Clip { child, lo, hi } => {
            let v = reference_eval(child, obs, dt, acc, k);
            if v < *lo {
                *lo
            } else if v > *hi {
                *hi
            } else {
                v
            }
        }
        Expr::If {
            feature,
            threshold,
            then,
            otherwise,
        } => {
            let a = reference_eval(then, obs, dt, acc, k);
            let b = reference_eval(otherwise, obs, dt, acc, k);
            if obs[*feature] < *threshold {
                a
            } else {
                b
            }
        }
        Expr::Sum(xs) => xs.iter().map(|x| reference_eval(x, obs, dt, acc, k)).sum(),
        Expr::Tree(t) => {
            let mut node = t;
            loop {
                match node {
                    TreeNode::Leaf(Leaf::Const(c)) => return *c,
                    TreeNode::Leaf(Leaf::Affine { weights, bias }) => {
                        return bias + weights.iter().zip(obs).map(|(w, x)| w * x).sum::<f64>()
                    }
                    TreeNode::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => node = if obs[*feature] < *threshold { left } else { right },
                }
            }
        }
    }
}

#[test]
fn interpreter_matches_reference_on_random_streams() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let obs_dim = 4;
    let cfg = RandomProgramConfig::new(obs_dim, 2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let prog: ProgramAst<f64> = random_program(&mut rng, &cfg);
        let dt = rng.random_range(0.01..0.2);
        let mut st = ProgState::new(&prog);
        let mut acc = vec![(0.0, None); prog.pid_count()];
        for _ in 0..20 {
            let obs: Vec<f64> = (0..obs_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (u, next) = eval_step(&prog, &st, &obs, dt).unwrap();
            st = next;
            let mut k = 0;
            for (j, e) in prog.outputs.iter().enumerate() {
                let r = reference_eval(e, &obs, dt, &mut acc, &mut k);
                worst = worst.max((u[j] - r).abs());
            }
        }
    }
    assert!(worst <= 1e-12, "max deviation {worst}");
}

use rand::Rng;

#[test]
fn pid_output_is_linear_in_gains() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let run = |kp: f64, ki: f64, kd: f64, stream: &[f64]| -> Vec<f64> {
        let prog = ProgramAst::new(vec![Expr::Pid(Pid {
            feature: 0,
            setpoint: 0.2,
            kp,
            ki,
            kd,
        })]);
        let mut st = ProgState::new(&prog);
        stream
            .iter()
            .map(|&x| {
                let (u, next) = eval_step(&prog, &st, &[x], 0.05).unwrap();
                st = next;
                u[0]
            })
            .collect()
    };
    for _ in 0..50 {
        let stream: Vec<f64> = (0..100).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (kp, ki, kd) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let full = run(kp, ki, kd, &stream);
        let parts: Vec<Vec<f64>> = vec![run(kp, 0.0, 0.0, &stream), run(0.0, ki, 0.0, &stream), run(0.0, 0.0, kd, &stream)];
        for t in 0..stream.len() {
            let s = parts[0][t] + parts[1][t] + parts[2][t];
            assert!((full[t] - s).abs() <= 1e-12 * (1.0 + full[t].abs()), "t={t}");
        }
    }
}

fn tree_data(xs: &[f64], ys: &[f64]) -> ImitationDataset {
    ImitationDataset::from_pairs(xs.iter().map(|&x| vec![x]).collect(), ys.iter().map(|&y| vec![y]).collect()).unwrap()
}

#[test]
fn constant_expert_gives_single_leaf() {
    let xs: Vec<f64> = (0..200).map(|i| i as f64 / 200.0).collect();
    let ys = vec![0.75; 200];
    let fit = fit_tree(&tree_data(&xs, &ys), &ClassConfig::tree(4)).unwrap();
    assert_eq!(fit.program.outputs, vec![Expr::Tree(TreeNode::Leaf(Leaf::Const(0.75)))]);
    assert_eq!(fit.sse, 0.0);
}

#[test]
fn step_expert_split_near_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let xs: Vec<f64> = (0..1000).map(|_| rng.random_range(0.0..1.0)).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| if x < 0.5 { -1.0 } else { 1.0 }).collect();
    let fit = fit_tree(&tree_data(&xs, &ys), &ClassConfig::tree(3)).unwrap();
    match &fit.program.outputs[0] {
        Expr::Tree(TreeNode::Split { feature, threshold, .. }) => {
            assert_eq!(*feature, 0);
            assert!((threshold - 0.5).abs() <= 0.02, "threshold {threshold}");
        }
        other => panic!("expected a split, got {other:?}"),
    }
    assert!(fit.sse < 1e-12);
}

#[test]
fn depth_zero_is_mean_leaf() {
    let xs = [0.0, 1.0, 2.0, 3.0];
    let ys = [1.0, 2.0, 4.0, 9.0];
    let fit = fit_tree(&tree_data(&xs, &ys), &ClassConfig::tree(0)).unwrap();
    assert_eq!(fit.program.outputs, vec![Expr::Tree(TreeNode::Leaf(Leaf::Const(4.0)))]);
}

#[test]
fn empty_dataset_rejected() {
    let ds = ImitationDataset::new(1, 1, 0);
    assert!(matches!(fit_tree(&ds, &ClassConfig::tree(2)), Err(Error::Contract(_))));
}

#[test]
fn tree_sse_non_increasing_in_depth() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let obs: Vec<Vec<f64>> = (0..400).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let acts: Vec<Vec<f64>> = obs
        .iter()
        .map(|o| vec![(3.0 * o[0]).sin() + o[1] * o[2], o[2].abs()])
        .collect();
    let ds = ImitationDataset::from_pairs(obs, acts).unwrap();
    let mut prev = f64::INFINITY;
    for depth in 0..8 {
        let fit = fit_tree(&ds, &ClassConfig::tree(depth)).unwrap();
        assert!(fit.sse <= prev + 1e-9, "depth {depth}: {} > {prev}", fit.sse);
        ClassConfig::tree(depth).admits(&fit.program, 3, 2).unwrap();
        prev = fit.sse;
    }
}

#[test]
fn affine_leaves_fit_linear_data_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let obs: Vec<Vec<f64>> = (0..100).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
    let acts: Vec<Vec<f64>> = obs.iter().map(|o| vec![2.0 * o[0] - o[1] + 0.5]).collect();
    let ds = ImitationDataset::from_pairs(obs, acts).unwrap();
    let mut cfg = ClassConfig::tree(0);
    cfg.affine_leaves = true;
    let fit = fit_tree(&ds, &cfg).unwrap();
    assert!(fit.sse < 1e-20);
}

#[test]
fn class_membership() {
    let pid_class = ClassConfig::pid_dsl();
    pid_class.admits(&p("(clip (pid 0 0 1 0 0) -2 2)"), 3, 1).unwrap();
    assert!(pid_class.admits(&p("(tree (leaf 1))"), 3, 1).is_err());
    assert!(ClassConfig::tree(1).admits(&p("(tree (split 0 0 (split 1 0 (leaf 1) (leaf 2)) (leaf 3)))"), 3, 1).is_err());
    assert!(pid_class.admits(&p("(const 1) (const 2)"), 3, 1).is_err());
}
