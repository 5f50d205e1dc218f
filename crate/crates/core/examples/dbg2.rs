fn main() {
    #[cfg(feature = "parallel")]
    println!("rayon threads: {}", rayon::current_num_threads());
    let t0 = std::time::Instant::now();
    let v: Vec<f64> = missdag::par::map_collect(8, |i| {
        let mut acc = 0.0f64;
        for k in 0..20_000_000u64 { acc += (k as f64 * (i + 1) as f64).sqrt(); }
        acc
    });
    println!("8 heavy tasks: {:.2}s (sink {})", t0.elapsed().as_secs_f64(), v.iter().sum::<f64>());
}
