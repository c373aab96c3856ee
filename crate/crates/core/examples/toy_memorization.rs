//! Memorizes five synthetic proteins with the default model in f32 and
//! reports clean-backbone recovery and perplexity per recycling stage.
//!
//!     cargo run --release --example toy_memorization -- [steps] [seed]

use std::time::Instant;

use invfold::model::InverseFoldingModel;
use invfold::structure::ProteinBackbone;
use invfold::training::{evaluate_corpus, train_toy, ToySetup};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let steps: Option<usize> = args.next().map(|s| s.parse()).transpose()?;
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let mut toy = ToySetup::new(seed);
    if let Some(s) = steps {
        toy.train.max_steps = Some(s);
    }
    let layout = toy.features.layout();
    let model = InverseFoldingModel::<f32>::new(
        toy.model.clone(),
        layout.node_dim(),
        layout.edge_dim(),
        seed,
    )?;
    let lens: Vec<usize> = toy.corpus.iter().map(|b| b.len()).collect();
    println!(
        "proteins {lens:?}, {} parameters",
        model.params.num_scalars()
    );

    let start = Instant::now();
    let out = train_toy(
        model,
        &toy.corpus,
        &toy.features,
        &toy.structure_prior,
        &toy.seq_prior,
        &toy.train,
    )?;
    for row in out
        .log
        .iter()
        .filter(|r| r.stage == "total" && (r.epoch % 40 == 0 || r.epoch == 1))
    {
        println!(
            "epoch {:4} step {:5} loss {:.4} ppl {:.3} recovery {:.1}% lr {:.2e}",
            row.epoch, row.step, row.loss, row.ppl, row.recovery, row.lr
        );
    }
    println!("{} steps in {:.1?}", out.steps, start.elapsed());

    let refs: Vec<&ProteinBackbone> = toy.corpus.iter().collect();
    let sums = evaluate_corpus(
        &out.model,
        &refs,
        &toy.features,
        &toy.structure_prior,
        &toy.seq_prior,
    )?;
    for (t, s) in sums.iter().enumerate() {
        let m = s.finish()?;
        println!(
            "stage {}: recovery {:.1}% ppl {:.4}",
            t + 1,
            m.recovery,
            m.perplexity
        );
    }
    Ok(())
}
