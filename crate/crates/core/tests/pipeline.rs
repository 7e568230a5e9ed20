use skrleak_core::cascade::{noisy_pair, reconcile, CascadeConfig, Transcript};
use skrleak_core::experiment::config::ExperimentConfig;
use skrleak_core::experiment::histogram::{read_histogram_file, CacheKey};
use skrleak_core::experiment::sweep::to_csv;
use skrleak_core::experiment::{measure_histogram, run_sweep, run_sweep_with_cache, HistogramCache, HistogramMode};
use skrleak_core::leakage::{sample_tags, LeakageReport};
use skrleak_core::math::Probability;

#[test]
fn dumped_transcript_feeds_leakage_report() {
    let (a, b) = noisy_pair(20_000, 0.04, 17).unwrap();
    let run = reconcile(&a, &b, 0.04, &CascadeConfig::with_seed(17)).unwrap();
    let dump = run.transcript.to_dump_string();
    let back = Transcript::read_dump(dump.as_bytes()).unwrap();
    assert_eq!(back.blocks(), run.transcript.blocks());

    let tags = sample_tags(back.n(), 0.1, 0.5, 3).unwrap();
    let delta = Probability::new(0.4).unwrap();
    let r = LeakageReport::evaluate(&back, &tags, delta, delta).unwrap();
    assert_eq!(r.leaked_all, run.transcript.len());
    assert!(r.exact_leaked_useful <= r.leaked_all);
    assert_eq!(r.csv_row().split(',').count(), LeakageReport::CSV_HEADER.split(',').count());
}

#[test]
fn sweep_from_config_text_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bb84.csv");
    let text = format!(
        "protocol = decoy-bb84\ndistance_start = 0\ndistance_stop = 150\ndistance_step = 10\nn_bits = 10000\nseed_count = 2\noutput = {}\n",
        out.display()
    );
    let cfg = ExperimentConfig::parse(&text).unwrap();
    let rows = run_sweep(&cfg).unwrap();
    let first = std::fs::read(&out).unwrap();
    run_sweep(&cfg).unwrap();
    assert_eq!(first, std::fs::read(&out).unwrap());
    assert_eq!(String::from_utf8(first).unwrap(), to_csv(&rows));
    for r in &rows {
        assert!(r.r_improved >= r.r_original);
        assert!(0.0 <= r.leaked_useful_per_bit && r.leaked_useful_per_bit <= r.leaked_all_per_bit);
    }
}

#[test]
fn disk_cache_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::parse(
        "protocol = sns-tf\ndistances = 200, 500, 800\nn_bits = 10000\nseeds = 5\nmode = measured\n",
    )
    .unwrap();
    let cold = run_sweep(&cfg).unwrap();
    let warm_cache = HistogramCache::with_dir(dir.path());
    let first = run_sweep_with_cache(&cfg, &warm_cache).unwrap();
    let reloaded = run_sweep_with_cache(&cfg, &HistogramCache::with_dir(dir.path())).unwrap();
    assert_eq!(cold, first);
    assert_eq!(cold, reloaded);

    let file = std::fs::read_dir(dir.path()).unwrap().next().unwrap().unwrap().path();
    let (key, hist) = read_histogram_file(std::io::BufReader::new(std::fs::File::open(file).unwrap())).unwrap();
    assert_eq!(key.seeds, vec![5]);
    assert_eq!(key.mode, HistogramMode::Measured);
    assert_eq!(hist, measure_histogram(key.qber(), 10_000, &[5], HistogramMode::Measured).unwrap());
}

#[test]
fn seeds_are_part_of_the_cache_key() {
    let a = CacheKey::new(0.03, 10_000, &[1], HistogramMode::Measured);
    let b = CacheKey::new(0.03, 10_000, &[2], HistogramMode::Measured);
    assert_ne!(a, b);
    assert_eq!(a, CacheKey::new(0.03004, 10_000, &[1], HistogramMode::Measured));
}
