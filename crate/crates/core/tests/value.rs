use apicon_core::dsl::TensorFn;
use apicon_core::value::{decode_input, decode_value, encode_input, encode_value};
use apicon_core::value::{byte_size, tensor_prop, ApiInput, ConcreteValue, DtypeTable, Prop, Tensor};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6..1e6f64, Just(0.0), Just(-1.0), Just(0.5)]
}

fn special() -> impl Strategy<Value = f64> {
    prop_oneof![finite(), Just(f64::NAN), Just(f64::INFINITY), Just(f64::NEG_INFINITY)]
}

fn tensor() -> impl Strategy<Value = Tensor> {
    (prop::collection::vec(0u64..4, 0..4), 0u32..6, any::<bool>()).prop_flat_map(|(shape, dtype, full)| {
        let n = shape.iter().product::<u64>() as usize;
        (prop::collection::vec(special(), n), finite(), finite()).prop_map(move |(el, a, b)| {
            if full {
                Tensor::from_elements(shape.clone(), dtype, el)
            } else {
                Tensor::summary(shape.clone(), dtype, a.min(b), a.max(b))
            }
        })
    })
}

fn scalar() -> impl Strategy<Value = ConcreteValue> {
    prop_oneof![
        any::<i64>().prop_map(ConcreteValue::Int),
        special().prop_map(ConcreteValue::Float),
        any::<bool>().prop_map(ConcreteValue::Bool),
        "[a-z ]{0,8}".prop_map(ConcreteValue::Str),
        (0u32..6).prop_map(ConcreteValue::Dtype),
        Just(ConcreteValue::None),
    ]
}

fn value() -> impl Strategy<Value = ConcreteValue> {
    prop_oneof![
        scalar(),
        tensor().prop_map(ConcreteValue::Tensor),
        prop::collection::vec(scalar(), 0..4).prop_map(ConcreteValue::List),
        prop::collection::vec(scalar(), 0..4).prop_map(ConcreteValue::Tuple),
        prop::collection::vec(tensor().prop_map(ConcreteValue::Tensor), 0..3).prop_map(ConcreteValue::List),
    ]
}

proptest! {
    #[test]
    fn value_round_trip(v in value()) {
        let back = decode_value(&encode_value(&v)).unwrap();
        prop_assert_eq!(back, v);
    }

    #[test]
    fn input_round_trip(vs in prop::collection::vec(value(), 0..4)) {
        let mut input = ApiInput::new("t.f");
        for (i, v) in vs.into_iter().enumerate() {
            input.set(&format!("p{i}"), v);
        }
        let back = decode_input(&encode_input(&input)).unwrap();
        prop_assert_eq!(back, input);
    }

    #[test]
    fn min_max_within_range(t in tensor()) {
        let v = ConcreteValue::Tensor(t.clone());
        if t.elements.as_ref().is_some_and(|e| e.iter().any(|x| !x.is_nan())) {
            let Prop::Float(lo) = tensor_prop(&v, TensorFn::Min, None).unwrap() else { panic!() };
            let Prop::Float(hi) = tensor_prop(&v, TensorFn::Max, None).unwrap() else { panic!() };
            prop_assert!(lo >= t.lo && hi <= t.hi);
        }
    }

    #[test]
    fn byte_size_monotone(shape in prop::collection::vec(0u64..6, 1..4), k in 0usize..3, code in 0u32..6) {
        let table = DtypeTable::default();
        let k = k % shape.len();
        let a = Tensor::summary(shape.clone(), code, 0.0, 0.0);
        let mut bigger = shape.clone();
        bigger[k] += 1;
        let b = Tensor::summary(bigger, code, 0.0, 0.0);
        prop_assert!(byte_size(&a, &table).unwrap() <= byte_size(&b, &table).unwrap());
        let wide = table.entries().iter().max_by_key(|d| d.byte_width).unwrap().code;
        let c = Tensor::summary(shape, wide, 0.0, 0.0);
        prop_assert!(byte_size(&a, &table).unwrap() <= byte_size(&c, &table).unwrap());
    }
}

#[test]
fn negative_shape_index_resolves_from_the_end() {
    let v = ConcreteValue::Tensor(Tensor::summary(vec![5, 3, 4], 0, 0.0, 1.0));
    assert_eq!(tensor_prop(&v, TensorFn::Shape, Some(-1)).unwrap(), Prop::Int(4));
    assert_eq!(tensor_prop(&v, TensorFn::Shape, Some(-3)).unwrap(), Prop::Int(5));
    assert!(tensor_prop(&v, TensorFn::Shape, Some(-4)).is_err());
    assert!(tensor_prop(&v, TensorFn::Shape, Some(3)).is_err());
}
