use ergokin::ingest::{read_recording_str, write_recording_string, IngestError};
use ergokin::kinmodel::KinematicModel;
use ergokin::rotmath::geodesic;
use ergokin::synth::{SensorRig, SyntheticMotion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn golden_text(seconds: f64) -> String {
    let model = KinematicModel::default();
    let motion = SyntheticMotion::new(model.clone(), 3);
    let rig = SensorRig::random(&model, 15.0, 1.0, 4);
    write_recording_string(&rig.record(&motion, 50.0, seconds, 0.0)).unwrap()
}

fn mutate(text: &str, rng: &mut ChaCha8Rng) -> (&'static str, String) {
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let header = lines.iter().position(|l| l.starts_with("time_s")).unwrap();
    let data = header + 1..lines.len();
    let row = rng.random_range(data.start..data.end - 1);
    let kind = rng.random_range(0..7);
    let name = match kind {
        0 => {
            let l = lines[row].clone();
            lines.insert(row, l);
            "duplicate row"
        }
        1 => {
            lines.swap(row, row + 1);
            "swap rows"
        }
        2 | 3 => {
            let mut cells: Vec<String> = lines[row].split(',').map(String::from).collect();
            let c = rng.random_range(0..cells.len());
            if kind == 2 {
                cells[c] = ["x", "", "nan", "1e400", "0.5.5"][rng.random_range(0..5)].to_string();
            } else {
                cells.remove(c);
            }
            lines[row] = cells.join(",");
            if kind == 2 { "garbage cell" } else { "missing cell" }
        }
        4 => {
            let fixed: Vec<usize> = (0..=header).filter(|&h| !lines[h].starts_with("# calibration:")).collect();
            let h = fixed[rng.random_range(0..fixed.len())];
            let l = &lines[h];
            let cut = rng.random_range(0..l.len().saturating_sub(1).max(1));
            lines[h] = format!("{}~{}", &l[..cut], &l[cut + 1..]);
            "corrupt header"
        }
        5 => {
            let mut cells: Vec<String> = lines[row].split(',').map(String::from).collect();
            let c = rng.random_range(1..cells.len());
            cells[c] = format!("{:.9}", cells[c].parse::<f64>().unwrap() + 0.05);
            lines[row] = cells.join(",");
            "denormalized quaternion"
        }
        _ => {
            let l = &lines[row];
            let cut = rng.random_range(0..l.len() / 2);
            lines[row] = l[..cut].to_string();
            "truncated row"
        }
    };
    (name, lines.join("\n") + "\n")
}

#[test]
fn structural_mutations_are_rejected() {
    let text = golden_text(2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for i in 0..2000 {
        let (kind, bad) = mutate(&text, &mut rng);
        match read_recording_str(&bad) {
            Err(IngestError::Format { .. }) => {}
            other => panic!("mutation {i} ({kind}) was not rejected: {other:?}"),
        }
    }
}

#[test]
fn long_round_trip() {
    let text = golden_text(200.0);
    let rec = read_recording_str(&text).unwrap();
    assert_eq!(rec.frames.len(), 10_000);
    let again = read_recording_str(&write_recording_string(&rec).unwrap()).unwrap();
    assert_eq!(again.segment_map, rec.segment_map);
    assert_eq!(again.frames.len(), rec.frames.len());
    let cells = |s: &str| -> Vec<f64> { s.split(',').map(|c| c.parse().unwrap()).collect() };
    let rewritten = write_recording_string(&again).unwrap();
    let data = |s: &str| -> Vec<String> { s.lines().skip_while(|l| !l.starts_with("time_s")).skip(1).map(String::from).collect() };
    for (x, y) in data(&text).iter().zip(data(&rewritten)) {
        for (u, v) in cells(x).iter().zip(cells(&y)) {
            assert!((u - v).abs() <= 1e-7, "{u} vs {v}");
        }
    }
    for (f, g) in rec.frames.iter().zip(&again.frames) {
        assert_eq!(f.tick_index, g.tick_index);
        for (s, q) in &f.orientations {
            assert!(geodesic(q, &g.orientations[s]) < 1e-7);
        }
    }
}
