// temporary diagnostic: full-parameter FD sweep with the two-regime metric
use lewis_core::neural::gradcheck::coordinate_error;
use lewis_core::neural::models::{softmax_ce, Seq2SeqModel};
use lewis_core::neural::{EncoderConfig, Parameterized, Seq2SeqConfig};

fn main() {
    let cfg = Seq2SeqConfig {
        encoder: EncoderConfig {
            layers: 2, heads: 2, model_dim: 16, ff_dim: 32, max_len: 10,
            dropout: 0.0, vocab_size: 14,
        },
        decoder_layers: 2,
        decoder_max_len: 10,
    };
    let mut model = Seq2SeqModel::new(cfg, 32).unwrap();
    let batch: Vec<(Vec<u32>, Vec<u32>, Vec<u32>)> = vec![
        (vec![1, 2, 3], vec![2, 5, 6, 7], vec![5, 6, 7, 3]),
        (vec![4, 5], vec![2, 8, 9], vec![8, 9, 3]),
    ];
    let loss_of = |m: &mut Seq2SeqModel| -> f64 {
        let mut total = 0.0;
        for (src, tin, tout) in &batch {
            let enc = m.encode(src).unwrap();
            let (logits, _) = m.decoder.forward(tin, &enc, &mut None).unwrap();
            let targets: Vec<Option<u32>> = tout.iter().map(|&t| Some(t)).collect();
            total += softmax_ce(&logits, &targets).0;
        }
        total
    };
    model.zero_grads();
    for (src, tin, tout) in &batch {
        model.step(src, tin, tout, &mut None).unwrap();
    }
    let metas: Vec<(String, usize)> = model.params_mut().iter().map(|(n, t)| (n.clone(), t.len())).collect();
    let h = 1e-5;
    let mut max_err = 0.0f64;
    let mut max_info = String::new();
    let mut over = 0usize;
    let mut flat = 0usize;
    for (pi, (name, len)) in metas.iter().enumerate() {
        for k in 0..*len {
            let analytic = { let mut ps = model.params_mut(); ps[pi].1.g.data[k] };
            let orig = { let mut ps = model.params_mut(); let o = ps[pi].1.w.data[k]; ps[pi].1.w.data[k] = o + h; o };
            let lp = loss_of(&mut model);
            { let mut ps = model.params_mut(); ps[pi].1.w.data[k] = orig - h; }
            let lm = loss_of(&mut model);
            { let mut ps = model.params_mut(); ps[pi].1.w.data[k] = orig; }
            let fd = (lp - lm) / (2.0 * h);
            let err = coordinate_error(analytic, fd);
            if err > 1e-4 { over += 1; }
            if err > max_err { max_err = err; max_info = format!("{name}[{k}] a={analytic:.3e} fd={fd:.3e}"); }
            flat += 1;
        }
    }
    println!("full sweep (no warmup): over-1e-4 {over}/{flat}, max err {max_err:.3e} at {max_info}");
}
