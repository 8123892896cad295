// Scratch: per-class best-anchor IoU statistics of candidate anchor
// configurations over the synthetic corpus. Not part of the suite.

use docdet::data::synth::{synth_page, SynthConfig};
use docdet::detector::preprocess::INPUT_SIZE;
use docdet::geometry::{generate_anchors, iou, AnchorConfig, ClassLabel};

fn main() {
    let cfg = SynthConfig::base(41);
    let pages: Vec<_> = (0..60).map(|i| synth_page(&cfg, i).unwrap()).collect();

    let candidates: Vec<(&str, AnchorConfig)> = vec![
        (
            "wide-a",
            AnchorConfig::new(
                vec![24.0, 48.0, 96.0, 192.0, 320.0, 448.0],
                vec![0.08, 0.2, 0.4, 0.7, 1.1],
                16,
            )
            .unwrap(),
        ),
        (
            "wide-b",
            AnchorConfig::new(
                vec![48.0, 80.0, 128.0, 200.0, 320.0, 448.0],
                vec![0.05, 0.12, 0.3, 0.6, 1.0],
                16,
            )
            .unwrap(),
        ),
        (
            "wide-c",
            AnchorConfig::new(
                vec![56.0, 88.0, 136.0, 208.0, 312.0, 440.0],
                vec![0.04, 0.1, 0.25, 0.55, 1.0],
                16,
            )
            .unwrap(),
        ),
        ("reference", AnchorConfig::reference()),
    ];

    for (name, acfg) in &candidates {
        let (fh, fw) = (INPUT_SIZE / acfg.stride(), INPUT_SIZE / acfg.stride());
        let anchors = generate_anchors(acfg, fh, fw);
        let mut per_class: Vec<Vec<f64>> = vec![vec![]; 3];
        for page in &pages {
            let fx = INPUT_SIZE as f64 / page.image.width as f64;
            let fy = INPUT_SIZE as f64 / page.image.height as f64;
            for a in &page.annotations {
                let gt = a.bbox.scale(fx, fy);
                let best = anchors.iter().map(|an| iou(an, &gt)).fold(0.0f64, f64::max);
                per_class[a.label.index()].push(best);
            }
        }
        println!("== {name} (k = {})", acfg.anchors_per_cell());
        for (ci, vals) in per_class.iter().enumerate() {
            let mut v = vals.clone();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let p10 = v[v.len() / 10];
            let med = v[v.len() / 2];
            let frac07 = v.iter().filter(|&&x| x >= 0.7).count() as f64 / v.len() as f64;
            println!(
                "  {:?} n={} mean {:.3} p10 {:.3} median {:.3} frac>=0.7 {:.2}",
                ClassLabel(ci as u32),
                v.len(),
                mean,
                p10,
                med,
                frac07
            );
        }
    }
}
