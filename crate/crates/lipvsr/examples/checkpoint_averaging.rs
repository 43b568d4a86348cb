//! Checkpoint plumbing: capture, save, load, and epoch-window averaging,
//! including the bit-exactness properties the trainer relies on.
//!
//!     cargo run --release --example checkpoint_averaging

use lipvsr::model::{ModelConfig, VsrModel};
use lipvsr::train::{average_checkpoints, Checkpoint, CheckpointMeta};

fn main() -> lipvsr::Result<()> {
    let model = VsrModel::new(ModelConfig::micro(6), 3)?;
    let params = model.params();
    let meta = |epoch: u32| CheckpointMeta {
        stage: 1,
        epoch,
        seed: 3,
        config_digest: 0xfeed,
        note: String::new(),
    };

    // Three "epochs": nudge one parameter between captures.
    let ck1 = Checkpoint::capture(&params, meta(1));
    params[0].1.with_data_mut(|d| d[0] += 0.5);
    let ck2 = Checkpoint::capture(&params, meta(2));
    params[0].1.with_data_mut(|d| d[0] += 0.5);
    let ck3 = Checkpoint::capture(&params, meta(3));
    println!(
        "first weight across epochs: {:.4}, {:.4}, {:.4}",
        ck1.params[0].2[0], ck2.params[0].2[0], ck3.params[0].2[0]
    );

    let avg = average_checkpoints(&[&ck1, &ck2, &ck3])?;
    println!(
        "averaged first weight: {:.4} (note: {:?})",
        avg.params[0].2[0], avg.meta.note
    );

    let permuted = average_checkpoints(&[&ck3, &ck1, &ck2])?;
    let identical = avg
        .params
        .iter()
        .zip(&permuted.params)
        .all(|((_, _, a), (_, _, b))| {
            a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        });
    println!("order-permuted average bit-identical: {identical}");

    let singleton = average_checkpoints(&[&ck2])?;
    println!(
        "singleton average is the identity: {}",
        singleton.params[0].2 == ck2.params[0].2
    );

    let dir = std::env::temp_dir().join("lipvsr_ckpt_demo");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("averaged.lckp");
    avg.save(&path)?;
    let loaded = Checkpoint::load(&path)?;
    println!(
        "saved and reloaded {} parameters from {} (meta {:?})",
        loaded.params.len(),
        path.display(),
        loaded.meta
    );

    // Restoring into the live model: the weights now equal the average.
    loaded.restore(&params)?;
    println!(
        "model first weight after restore: {:.4}",
        params[0].1.data()[0]
    );
    Ok(())
}
