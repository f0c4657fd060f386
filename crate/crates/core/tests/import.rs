use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use dipa::synth::{import_generic_csv, ColumnMap, ImportConfig};
use dipa::DipaError;

fn write_csv(dir: &tempfile::TempDir, body: &str) -> PathBuf {
    let p = dir.path().join("t.csv");
    fs::write(&p, body).unwrap();
    p
}

/// Rows `frame,agent_id,x,y` for agents moving along +x at `speed` with lateral offset `y`.
fn straight_rows(agents: &[(&str, f64, f64)], frames: std::ops::Range<i64>) -> String {
    let mut s = String::from("frame,agent_id,x,y\n");
    for f in frames {
        for (id, speed, y) in agents {
            writeln!(s, "{f},{id},{},{y}", speed * 0.1 * f as f64).unwrap();
        }
    }
    s
}

#[test]
fn two_agents_give_every_full_window() {
    let dir = tempfile::tempdir().unwrap();
    let (l, w) = (45, 40);
    let p = write_csv(
        &dir,
        &straight_rows(&[("a", 10.0, 0.0), ("b", 8.0, 3.5)], 0..l),
    );
    let d = import_generic_csv(&p, &ImportConfig::interaction()).unwrap();
    assert_eq!(d.len(), 2 * (l - w + 1) as usize);
    for i in &d.instances {
        assert_eq!(i.neighbours.len(), 1);
        i.validate(10, 30).unwrap();
        let last = i.prediction_agent.last().unwrap();
        assert_eq!((last.position, last.yaw), ([0.0, 0.0], 0.0));
    }
    let a0 = d.instances.iter().find(|i| i.id == "a@0").unwrap();
    // 10 m/s straight ahead: the first future point is 1 m in front.
    assert!((a0.future[0][0] - 1.0).abs() < 1e-9 && a0.future[0][1].abs() < 1e-9);
    assert!((a0.prediction_agent.states[0].speed - 10.0).abs() < 1e-9);
    // Neighbour b is 3.5 m to the left.
    let nb = a0.neighbours[0].last().unwrap();
    assert!((nb.position[1] - 3.5).abs() < 1e-9);
}

#[test]
fn circular_motion_recovers_tangent_yaw() {
    let dir = tempfile::tempdir().unwrap();
    let (r, speed) = (20.0, 10.0);
    let omega = speed / r;
    let mut s = String::from("frame,agent_id,x,y\n");
    for f in 0..60 {
        let a = omega * 0.1 * f as f64;
        writeln!(s, "{f},c,{},{}", r * a.sin(), r * (1.0 - a.cos())).unwrap();
    }
    let p = write_csv(&dir, &s);
    let cfg = ImportConfig {
        stride: 5,
        ..ImportConfig::interaction()
    };
    let d = import_generic_csv(&p, &cfg).unwrap();
    assert!(!d.is_empty());
    for inst in &d.instances {
        // In the local frame the last state has yaw 0; earlier ones trail by ω·dt per step.
        let states = &inst.prediction_agent.states;
        for (k, st) in states.iter().enumerate() {
            let want = -omega * 0.1 * (states.len() - 1 - k) as f64;
            assert!(
                (st.yaw - want).abs() < 1e-3,
                "{}: step {k} yaw {} vs {want}",
                inst.id,
                st.yaw
            );
            assert!((st.speed - speed).abs() < 1e-2);
        }
    }
    // The world-frame heading of the window starting at frame 0 is the tangent at frame 9.
    let w0 = d.instances.iter().find(|i| i.id == "c@0").unwrap();
    assert!((w0.frame.rotation - omega * 0.9).abs() < 1e-3);
}

#[test]
fn column_map_and_given_kinematics_are_used() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = String::from("t,vid,px,py,heading,v,len,wid,cls\n");
    for f in 0..40 {
        writeln!(s, "{f},7,{},0,0.0,5.0,12.0,2.5,truck", 0.5 * f as f64).unwrap();
    }
    let p = write_csv(&dir, &s);
    let cfg = ImportConfig {
        columns: ColumnMap {
            frame: "t".into(),
            agent_id: "vid".into(),
            x: "px".into(),
            y: "py".into(),
            yaw: Some("heading".into()),
            speed: Some("v".into()),
            length: Some("len".into()),
            width: Some("wid".into()),
            agent_type: Some("cls".into()),
        },
        ..ImportConfig::interaction()
    };
    let d = import_generic_csv(&p, &cfg).unwrap();
    assert_eq!(d.len(), 1);
    let a = &d.instances[0].prediction_agent;
    assert_eq!(
        (a.length, a.width, a.agent_type),
        (12.0, 2.5, dipa::AgentType::Truck)
    );
    assert!(a.states.iter().all(|s| s.speed == 5.0));
}

#[test]
fn frame_gaps_split_tracks() {
    let dir = tempfile::tempdir().unwrap();
    let mut body = straight_rows(&[("a", 10.0, 0.0)], 0..42);
    body.push_str(
        &straight_rows(&[("a", 10.0, 0.0)], 50..95)
            .lines()
            .skip(1)
            .map(|l| format!("{l}\n"))
            .collect::<String>(),
    );
    let p = write_csv(&dir, &body);
    let d = import_generic_csv(&p, &ImportConfig::interaction()).unwrap();
    assert_eq!(d.len(), (42 - 40 + 1) + (45 - 40 + 1));
}

#[test]
fn neighbour_cap_keeps_the_nearest() {
    let dir = tempfile::tempdir().unwrap();
    let agents = [
        ("a", 10.0, 0.0),
        ("far", 10.0, 40.0),
        ("near", 10.0, 2.0),
        ("mid", 10.0, -9.0),
    ];
    let p = write_csv(&dir, &straight_rows(&agents, 0..40));
    let cfg = ImportConfig {
        neighbour_cap: 2,
        prediction_agents: vec!["a".into()],
        ..ImportConfig::interaction()
    };
    let d = import_generic_csv(&p, &cfg).unwrap();
    assert_eq!(d.len(), 1);
    let ids: Vec<&str> = d.instances[0]
        .neighbours
        .iter()
        .map(|n| n.agent_id.as_str())
        .collect();
    assert_eq!(ids, ["near", "mid"]);
}

#[test]
fn bad_inputs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_csv(&dir, "frame,agent_id,x\n0,a,1\n");
    assert!(matches!(
        import_generic_csv(&p, &ImportConfig::interaction()),
        Err(DipaError::Data(_))
    ));
    let p = write_csv(&dir, "frame,agent_id,x,y\n0,a,1,0\n0,a,2,0\n");
    assert!(matches!(
        import_generic_csv(&p, &ImportConfig::interaction()),
        Err(DipaError::Parse { line: 3, .. })
    ));
    let p = write_csv(&dir, "frame,agent_id,x,y\n0,a,oops,0\n");
    assert!(matches!(
        import_generic_csv(&p, &ImportConfig::interaction()),
        Err(DipaError::Parse { .. })
    ));
}
