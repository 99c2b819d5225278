use inkspot::pgm::{decode_pgm, encode_pgm, heatmap_pixels};
use inkspot::tensor_io::{decode, encode, header_len, read_tensor, write_tensor, FormatError, Tensor};
use inkspot_core::Grid;
use proptest::prelude::*;

fn tensor_strategy() -> impl Strategy<Value = Tensor> {
    prop::collection::vec(1usize..6, 1..=4).prop_flat_map(|dims| {
        let n: usize = dims.iter().product();
        prop::collection::vec(any::<u32>().prop_map(f32::from_bits), n)
            .prop_map(move |data| Tensor::new(dims.clone(), data).unwrap())
    })
}

fn bits(t: &Tensor) -> Vec<u32> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn bytes_round_trip_bitwise(t in tensor_strategy()) {
        let back = decode(&encode(&t)).unwrap();
        prop_assert_eq!(back.dims(), t.dims());
        prop_assert_eq!(bits(&back), bits(&t));
    }

    #[test]
    fn header_byte_corruption_is_rejected(t in tensor_strategy(), at in any::<prop::sample::Index>(), v in any::<u8>()) {
        let bytes = encode(&t);
        let at = at.index(header_len(t.dims().len()));
        prop_assume!(bytes[at] != v);
        let mut bad = bytes.clone();
        bad[at] = v;
        prop_assert!(decode(&bad).is_err());
    }

    #[test]
    fn pgm_payload_is_width_times_height(data in prop::collection::vec(0.0f32..1.0, 1..200), w in 1usize..20) {
        let h = data.len().div_ceil(w);
        let mut data = data;
        data.resize(h * w, 0.0);
        let g = Grid::new(h, w, data).unwrap();
        let bytes = encode_pgm(w, h, &heatmap_pixels(&g));
        let header = format!("P5\n{w} {h}\n255\n");
        prop_assert!(bytes.starts_with(header.as_bytes()));
        prop_assert_eq!(bytes.len() - header.len(), w * h);
        prop_assert_eq!(decode_pgm(&bytes).unwrap().shape(), (h, w));
    }
}

#[test]
fn file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.ftns");
    let t = Tensor::new(vec![3, 4, 5], (0..60).map(|i| i as f32 * 0.25 - 3.0).collect()).unwrap();
    write_tensor(&path, &t).unwrap();
    assert_eq!(read_tensor(&path).unwrap(), t);
}

#[test]
fn layout_of_a_small_tensor() {
    let bytes = encode(&Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    assert_eq!(bytes.len(), 15 + 16);
    assert_eq!(&bytes[..7], b"FTNS\x01\x00\x02");
    assert_eq!(&bytes[15..19], &1.0f32.to_le_bytes());
    let mut short = bytes.clone();
    short.truncate(15 + 12);
    assert_eq!(
        decode(&short),
        Err(FormatError::TruncatedPayload { expected: 16, found: 12 })
    );
}
