use archnet_core::baselines::{noise_baseline, rc4_encrypt_dataset, Rc4};
use archnet_core::dataset::{synth_shapes, Dataset, Representation};
use archnet_core::formats::{dequantize, quantize};
use archnet_core::metrics::pixel_correlation;
use archnet_tensor::Tensor;
use proptest::prelude::*;

/// Second RC4 implementation, written directly from the algorithm description
/// with index arithmetic in usize, used only as an oracle.
fn reference_rc4(key: &[u8], n: usize) -> Vec<u8> {
    let mut s: Vec<usize> = (0..256).collect();
    let mut j = 0usize;
    for i in 0..256 {
        j = (j + s[i] + key[i % key.len()] as usize) % 256;
        s.swap(i, j);
    }
    let (mut i, mut j) = (0usize, 0usize);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        i = (i + 1) % 256;
        j = (j + s[i]) % 256;
        s.swap(i, j);
        out.push(s[(s[i] + s[j]) % 256] as u8);
    }
    out
}

fn hex(s: &str) -> Vec<u8> {
    s.split_whitespace().map(|b| u8::from_str_radix(b, 16).unwrap()).collect()
}

#[test]
fn published_vectors_agree_with_both_implementations() {
    let key_ks = hex("EB 9F 77 81 B7 34 CA 72 A7 19");
    let wiki_ks = hex("60 44 DB 6D 41 B7");
    assert_eq!(reference_rc4(b"Key", 10), key_ks);
    assert_eq!(reference_rc4(b"Wiki", 6), wiki_ks);
    assert_eq!(Rc4::new(b"Key").unwrap().keystream(10), key_ks);
    assert_eq!(Rc4::new(b"Wiki").unwrap().keystream(6), wiki_ks);
    let ct = hex("BB F3 16 E8 D9 40 AF 0A D3");
    assert_eq!(Rc4::new(b"Key").unwrap().apply(b"Plaintext"), ct);
    let ref_ct: Vec<u8> = b"Plaintext".iter().zip(reference_rc4(b"Key", 9)).map(|(p, k)| p ^ k).collect();
    assert_eq!(ref_ct, ct);
}

fn is_permutation(s: &[u8; 256]) -> bool {
    let mut seen = [false; 256];
    s.iter().all(|&v| !std::mem::replace(&mut seen[v as usize], true))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matches_reference_on_random_keys(key in proptest::collection::vec(any::<u8>(), 1..=256), n in 0usize..600) {
        prop_assert_eq!(Rc4::new(&key).unwrap().keystream(n), reference_rc4(&key, n));
    }

    #[test]
    fn state_stays_a_permutation(key in proptest::collection::vec(any::<u8>(), 1..40), steps in 0usize..3000) {
        let mut r = Rc4::new(&key).unwrap();
        prop_assert!(is_permutation(r.permutation()));
        r.keystream(steps);
        prop_assert!(is_permutation(r.permutation()));
    }
}

#[test]
fn double_application_is_identity_on_1000_strings() {
    let mut gen = Rc4::new(b"corpus").unwrap();
    for case in 0..1000 {
        let len = gen.next_byte() as usize * 2 + case % 3;
        let msg = gen.keystream(len);
        let key = gen.keystream(1 + case % 32);
        let ct = Rc4::new(&key).unwrap().apply(&msg);
        assert_eq!(Rc4::new(&key).unwrap().apply(&ct), msg, "case {case}");
    }
}

#[test]
fn dataset_encryption_round_trips_on_the_byte_grid() {
    let d = synth_shapes(20, 8, 1).unwrap();
    let enc = rc4_encrypt_dataset(&d, b"secret").unwrap();
    assert_eq!(enc.images().shape(), d.images().shape());
    assert_eq!(enc.labels(), d.labels());
    assert_eq!(enc.representation(), &Representation::Encrypted("rc4".into()));
    let dec = rc4_encrypt_dataset(&enc, b"secret").unwrap();
    assert_eq!(dec.representation(), &Representation::Plain);
    for (a, b) in dec.images().data().iter().zip(d.images().data()) {
        assert_eq!(*a, dequantize(quantize(*b)));
        assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
    }
    assert_eq!(rc4_encrypt_dataset(&d, b"secret").unwrap(), enc);
}

#[test]
fn keystream_is_continuous_across_samples() {
    let d = synth_shapes(4, 4, 0).unwrap();
    let enc = rc4_encrypt_dataset(&d, b"k").unwrap();
    let ks = reference_rc4(b"k", d.images().len());
    for ((c, p), k) in enc.images().data().iter().zip(d.images().data()).zip(ks) {
        assert_eq!(quantize(*c), quantize(*p) ^ k);
    }
}

fn random_images(n: usize, seed: u64) -> Dataset {
    let mut r = Rc4::new(&seed.to_le_bytes()).unwrap();
    let bytes = r.keystream(n * 64);
    let t = Tensor::new(vec![n, 1, 8, 8], bytes.iter().map(|&b| dequantize(b)).collect()).unwrap();
    Dataset::new("rand", t, vec![0; n], 1, Representation::Plain).unwrap()
}

#[test]
fn different_keys_differ_in_over_99_percent_of_bytes() {
    let d = random_images(200, 3);
    let a = rc4_encrypt_dataset(&d, b"key-one").unwrap();
    let b = rc4_encrypt_dataset(&d, b"key-two").unwrap();
    let differ = a
        .images()
        .data()
        .iter()
        .zip(b.images().data())
        .filter(|(x, y)| quantize(**x) != quantize(**y))
        .count();
    let frac = differ as f64 / a.images().len() as f64;
    assert!(frac > 0.99, "{frac}");
}

#[test]
fn ciphertext_histogram_is_near_uniform() {
    let d = synth_shapes(2000, 8, 4).unwrap();
    let enc = rc4_encrypt_dataset(&d, b"histogram").unwrap();
    let mut counts = [0usize; 256];
    for &v in enc.images().data() {
        counts[quantize(v) as usize] += 1;
    }
    let expected = enc.images().len() as f64 / 256.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // Report only: 255 degrees of freedom.
    println!("rc4 ciphertext chi-square = {chi2:.1} (255 dof)");
}

#[test]
fn noise_sigma_zero_is_identity() {
    let d = synth_shapes(8, 8, 0).unwrap();
    let n = noise_baseline(&d, 0.0, 1).unwrap();
    assert_eq!(n.images(), d.images());
    assert_eq!(n.labels(), d.labels());
}

#[test]
fn noise_is_seeded_and_clamped() {
    let d = synth_shapes(8, 8, 0).unwrap();
    let a = noise_baseline(&d, 0.3, 7).unwrap();
    assert_eq!(a, noise_baseline(&d, 0.3, 7).unwrap());
    assert_ne!(a.images(), noise_baseline(&d, 0.3, 8).unwrap().images());
    assert!(a.images().data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(noise_baseline(&d, -1.0, 0).is_err());
}

#[test]
fn heavy_noise_decorrelates_pixels() {
    let d = synth_shapes(4, 32, 1).unwrap();
    let n = noise_baseline(&d, 10.0, 2).unwrap();
    let plane = |ds: &Dataset| ds.images().slice_outer(3..4).unwrap().reshape(vec![32, 32]).unwrap();
    let r = pixel_correlation(&plane(&d), &plane(&n)).unwrap();
    assert!(r.abs() < 0.1, "r = {r}");
}
