use anyflow::metrics::epe;
use anyflow::resize::{resize_flow_interp, resize_image, Interp};
use anyflow::synth::MotionKind;
use anyflow::train::{evaluate, make_eval_set};
use anyflow::{Model, ModelConfig};
use std::path::Path;

fn main() {
    let ck = std::env::args().nth(1).unwrap_or_else(|| "/tmp/full3k/model.afck".into());
    let model = Model::load(ModelConfig::desk(), Path::new(&ck)).unwrap();
    let kinds = [MotionKind::Translate, MotionKind::Rotate];

    let eval = make_eval_set(314_159, 20, &kinds, 64, 96, 8.0);
    for iters in [4usize, 8, 12] {
        let full = evaluate(&model, &eval, iters).unwrap();
        let mut sum = 0.0;
        for s in &eval {
            let d1 = resize_image(&s.img1, 32, 48);
            let d2 = resize_image(&s.img2, 32, 48);
            let (f, _) = model.infer(&d1, &d2, iters, (64, 96)).unwrap();
            sum += epe(&f[0], &s.gt, &s.valid).unwrap();
        }
        let half = sum / eval.len() as f64;
        println!("iters {iters:2}: full {full:.3} half {half:.3} ratio {:.3}", half / full);
    }

    let samples = make_eval_set(271_828, 50, &[MotionKind::TwoLayer], 64, 96, 8.0);
    for iters in [4usize, 12] {
        let mut wins = 0;
        let (mut ei_sum, mut eb_sum) = (0.0, 0.0);
        for s in &samples {
            let (up, _) = model.infer(&s.img1, &s.img2, iters, (128, 192)).unwrap();
            let (base, _) = model.infer(&s.img1, &s.img2, iters, (64, 96)).unwrap();
            let bicubic = resize_flow_interp(&base[0], 128, 192, Interp::Bicubic);
            let (gt2, valid2) = s.motion.ground_truth(64, 96, 128, 192);
            let ei = epe(&up[0], &gt2, &valid2).unwrap();
            let eb = epe(&bicubic, &gt2, &valid2).unwrap();
            ei_sum += ei;
            eb_sum += eb;
            if ei <= eb {
                wins += 1;
            }
        }
        println!(
            "x2 iters {iters:2}: implicit wins {wins}/50 (mean impl {:.3} vs bicubic {:.3})",
            ei_sum / 50.0,
            eb_sum / 50.0
        );
    }
}
