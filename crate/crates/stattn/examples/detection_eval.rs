//! Scoring detections against ground truth, in memory and through files.

use stattn::metrics::io::{read_detections, write_report};
use stattn::metrics::{error_decomposition, BBox, Detection, GroundTruthBox};

fn det(image: &str, b: [f64; 4], score: f64, cls: u32) -> Detection {
    Detection {
        image_id: image.into(),
        bbox: BBox::new(b[0], b[1], b[2], b[3]),
        score,
        cls,
    }
}

fn gt(image: &str, b: [f64; 4], cls: u32) -> GroundTruthBox {
    GroundTruthBox {
        image_id: image.into(),
        bbox: BBox::new(b[0], b[1], b[2], b[3]),
        cls,
    }
}

fn main() -> stattn::Result<()> {
    // two detections, two annotated boxes: one exact hit, one spurious box,
    // one box nothing came near — average precision lands on 51/101
    let worked_dets = vec![
        det("reef-001", [0.0, 0.0, 4.0, 4.0], 0.9, 2),
        det("reef-001", [40.0, 40.0, 4.0, 4.0], 0.8, 2),
    ];
    let worked_gts = vec![
        gt("reef-001", [0.0, 0.0, 4.0, 4.0], 2),
        gt("reef-001", [20.0, 20.0, 4.0, 4.0], 2),
    ];
    let worked = error_decomposition(&worked_dets, &worked_gts)?;
    println!(
        "worked case: ap50 {:.6} (51/101), e_miss {:.1}%\n",
        worked.ap50, worked.e_miss
    );

    // a second image adds a class confusion and another miss, so every
    // error bucket appears in the breakdown
    let mut dets = worked_dets;
    dets.push(det("reef-002", [0.0, 0.0, 3.0, 3.0], 0.95, 1));
    dets.push(det("reef-002", [10.0, 10.0, 3.0, 3.0], 0.7, 3));
    let mut gts = worked_gts;
    gts.push(gt("reef-002", [0.0, 0.0, 3.0, 3.0], 2));
    gts.push(gt("reef-002", [30.0, 30.0, 3.0, 3.0], 3));

    // matching consumes detections in descending-score order
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));

    let report = error_decomposition(&dets, &gts)?;
    println!("ap50   {:.6}", report.ap50);
    println!("e_cls  {:.1}%", report.e_cls);
    println!("e_loc  {:.1}%", report.e_loc);
    println!("e_miss {:.1}%", report.e_miss);
    for image in &report.images {
        println!("{}:", image.image_id);
        for m in &image.detections {
            match m.matched_gt {
                Some(g) => println!("  detection {} -> {:?} (ground truth {g})", m.detection, m.label),
                None => println!("  detection {} -> {:?}", m.detection, m.label),
            }
        }
        for &g in &image.missed_gts {
            println!("  ground truth {g} missed entirely");
        }
    }

    // the same evaluation through the file formats the CLI reads and writes
    let dir = tempfile::tempdir()?;
    let det_path = dir.path().join("detections.json");
    std::fs::write(
        &det_path,
        serde_json::to_string_pretty(&dets).expect("serializable"),
    )?;
    let reread = read_detections(&det_path)?;
    assert_eq!(reread, dets);

    let report_path = dir.path().join("report.json");
    write_report(&report_path, &report)?;
    println!(
        "\nwrote {} ({} bytes)",
        report_path.display(),
        std::fs::metadata(&report_path)?.len()
    );
    Ok(())
}
