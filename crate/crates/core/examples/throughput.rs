//! Times one forward/backward of each network at the default width.

use std::time::Instant;

use corrector_core::netcore::{ArchSpec, Discriminator, Generator, NoiseSample, Tensor};

fn main() -> corrector_core::Result<()> {
    corrector_core::netcore::enable_flush_to_zero();
    let spec = ArchSpec::default();
    let g = Generator::new(spec)?;
    let d = Discriminator::new(spec)?;
    let gp = g.init_params::<f32>(1);
    let dp = d.init_params::<f32>(2);
    println!("generator params {}, critic params {}", gp.count(), dp.count());
    let x = Tensor::filled(24, 16, 16, 0.3f32);
    let z = NoiseSample::<f32>::zeros(16);
    let reps = 10;

    let t = Instant::now();
    for _ in 0..reps {
        g.forward(&gp, &x, &z)?;
    }
    println!("generator forward      {:7.2} ms", t.elapsed().as_secs_f64() * 1e3 / reps as f64);

    let mut grads = gp.zeros_like();
    let t = Instant::now();
    for _ in 0..reps {
        let (out, tape) = g.forward(&gp, &x, &z)?;
        g.backward(&gp, &tape, Some(out.hi_res.clone()), Some(out.lo_res_proxy.clone()), &mut grads)?;
    }
    println!("generator fwd+bwd      {:7.2} ms", t.elapsed().as_secs_f64() * 1e3 / reps as f64);

    let t = Instant::now();
    for _ in 0..reps {
        g.forward_corrector(&gp, &x, &z)?;
    }
    println!("corrector forward      {:7.2} ms", t.elapsed().as_secs_f64() * 1e3 / reps as f64);

    let y = Tensor::filled(1, 128, 128, 0.4f32);
    let mut dgrads = dp.zeros_like();
    let t = Instant::now();
    for _ in 0..reps {
        d.score_and_grad(&dp, &x, &y, 1.0, Some(&mut dgrads))?;
    }
    println!("critic fwd+bwd         {:7.2} ms", t.elapsed().as_secs_f64() * 1e3 / reps as f64);

    let t = Instant::now();
    for _ in 0..reps {
        d.gradient_penalty(&dp, &x, &y, 10.0, 1.0, Some(&mut dgrads))?;
    }
    println!("critic penalty grad    {:7.2} ms", t.elapsed().as_secs_f64() * 1e3 / reps as f64);
    Ok(())
}
