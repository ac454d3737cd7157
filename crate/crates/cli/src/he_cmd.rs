use crate::out::{write_csv, write_json};
use crate::{invalid, Inconsistent, ParamArgs};
use hepim::bfv::*;
use hepim::config::{preset, Preset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::path::Path;
use std::time::Instant;

pub fn resolve(a: &ParamArgs) -> anyhow::Result<(Preset, EncryptionParams)> {
    let mut p = preset(&a.preset).map_err(invalid)?;
    if let Some(n) = a.n {
        p.n = n;
    }
    if let Some(b) = a.prime_bits {
        p.prime_bits = b;
    }
    if let Some(k) = a.primes {
        p.primes = k;
    }
    if let Some(t) = a.t {
        p.t = t;
    }
    let params = p.params().map_err(invalid)?;
    Ok((p, params))
}

fn describe(p: &Preset) {
    println!(
        "n={} primes={}x{}-bit t={}",
        p.n, p.primes, p.prime_bits, p.t
    );
}

#[derive(Serialize)]
struct KeyFile<'a> {
    params: &'a Preset,
    rns_primes: &'a [u64],
    secret: &'a [i64],
}

pub fn keygen(a: &ParamArgs, seed: u64, out: Option<&Path>) -> anyhow::Result<()> {
    let (p, params) = resolve(a)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sk = SecretKey::generate(&params, &mut rng);
    describe(&p);
    let key = KeyFile {
        params: &p,
        rns_primes: params.rns_primes(),
        secret: sk.coefficients(),
    };
    let weight = sk.coefficients().iter().filter(|&&c| c != 0).count();
    println!(
        "secret key: {} ternary coefficients, {weight} non-zero",
        sk.coefficients().len()
    );
    if let Some(path) = out {
        write_json(path, &(a, seed), &key)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

pub fn roundtrip(a: &ParamArgs, seed: u64) -> anyhow::Result<()> {
    let (p, params) = resolve(a)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sk = SecretKey::generate(&params, &mut rng);
    let t = params.plain_modulus();
    let n = params.ring_degree();
    let m: Vec<i64> = (0..n).map(|_| rng.random_range(0..t) as i64).collect();
    let k = rng.random_range(1..t.min(8));
    let ct = encrypt(&encode(&m, &params)?, &sk, &mut rng)?;
    let wire = ct.to_bytes();
    let back = Ciphertext::from_bytes(&wire, &params)?;
    let evaluated = he_add(&he_mul_scalar(&back, k)?, &back)?;

    describe(&p);
    println!("ciphertext_bytes={}", ciphertext_bytes(&params));
    println!("wire_bytes={}", wire.len());
    let plain = decode(&decrypt(&back, &sk)?);
    let want: Vec<u64> = m.iter().map(|&v| v as u64).collect();
    let got = decode(&decrypt(&evaluated, &sk)?);
    let want_eval: Vec<u64> = want.iter().map(|&v| (v * (k + 1)) % t).collect();
    println!("noise_budget_bits={:.1}", noise_budget(&evaluated, &sk));
    if plain != want || got != want_eval {
        return Err(Inconsistent("decryption does not match the message".into()).into());
    }
    println!("roundtrip: ok");
    Ok(())
}

#[derive(Serialize)]
struct Timing {
    op: &'static str,
    mean_ms: f64,
}

pub fn bench(a: &ParamArgs, seed: u64, iters: usize, out: Option<&Path>) -> anyhow::Result<()> {
    if iters == 0 {
        return Err(invalid("--iters must be positive"));
    }
    let (p, params) = resolve(a)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = params.plain_modulus();
    let n = params.ring_degree();
    let m: Vec<i64> = (0..n).map(|_| rng.random_range(0..t) as i64).collect();
    let pt = encode(&m, &params)?;
    let sk = SecretKey::generate(&params, &mut rng);
    let x = encrypt(&pt, &sk, &mut rng)?;
    let y = encrypt(&pt, &sk, &mut rng)?;

    let mut timings = Vec::new();
    let mut time =
        |op: &'static str, f: &mut dyn FnMut() -> anyhow::Result<()>| -> anyhow::Result<()> {
            let start = Instant::now();
            for _ in 0..iters {
                f()?;
            }
            timings.push(Timing {
                op,
                mean_ms: start.elapsed().as_secs_f64() * 1e3 / iters as f64,
            });
            Ok(())
        };
    let mut r2 = ChaCha8Rng::seed_from_u64(seed ^ 1);
    time("keygen", &mut || {
        let _ = SecretKey::generate(&params, &mut r2);
        Ok(())
    })?;
    time("encrypt", &mut || {
        let _ = encrypt(&pt, &sk, &mut r2)?;
        Ok(())
    })?;
    time("add", &mut || {
        let _ = he_add(&x, &y)?;
        Ok(())
    })?;
    time("mul_scalar", &mut || {
        let _ = he_mul_scalar(&x, 5)?;
        Ok(())
    })?;
    time("mul_plain", &mut || {
        let _ = he_mul_plain(&x, &pt)?;
        Ok(())
    })?;
    time("mul", &mut || {
        let _ = he_mul(&x, &y)?;
        Ok(())
    })?;
    time("decrypt", &mut || {
        let _ = decrypt(&x, &sk)?;
        Ok(())
    })?;

    describe(&p);
    println!("ciphertext_bytes={}", ciphertext_bytes(&params));
    for tm in &timings {
        println!("{:<11} {:>10.3} ms", tm.op, tm.mean_ms);
    }
    if let Some(path) = out {
        let mut w = timing_csv(&timings);
        w.insert_str(0, "op,mean_ms\n");
        write_csv(path, &(a, seed, iters), w.as_bytes())?;
    }
    Ok(())
}

fn timing_csv(rows: &[Timing]) -> String {
    rows.iter()
        .map(|r| format!("{},{}\n", r.op, r.mean_ms))
        .collect()
}
