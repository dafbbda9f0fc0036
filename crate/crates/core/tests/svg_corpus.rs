mod common;

use common::{check_golden, corpus};
use meol_core::svg::{
    parse_svg, rasterize_default, serialize_svg, simplify, simplify_rules, visual_distance,
    ElementNode, RasterImage, SvgDocument, SvgError, VISUAL_TOLERANCE,
};
use proptest::prelude::*;

#[test]
fn corpus_is_large_enough() {
    assert!(corpus().len() >= 20);
}

#[test]
fn serialization_round_trips_on_corpus() {
    for (name, src) in corpus() {
        let doc = parse_svg(&src).unwrap_or_else(|e| panic!("{name}: {e}"));
        let text = serialize_svg(&doc);
        let again = parse_svg(&text).unwrap();
        assert_eq!(doc, again, "{name}");
        assert_eq!(text, serialize_svg(&again), "{name}");
        assert_eq!(doc.element_count, again.element_count, "{name}");
        // source text is kept verbatim
        assert_eq!(doc.source_text, src, "{name}");
    }
}

#[test]
fn serialization_golden() {
    let (_, src) = corpus()
        .into_iter()
        .find(|(n, _)| n == "02_illustrator_export.svg")
        .unwrap();
    let doc = parse_svg(&src).unwrap();
    check_golden(
        "serialize/02_illustrator_export.svg",
        serialize_svg(&doc).as_bytes(),
    )
    .unwrap();
}

#[test]
fn raster_golden_for_first_corpus_entry() {
    let (_, src) = corpus().into_iter().next().unwrap();
    let img = rasterize_default(&parse_svg(&src).unwrap()).unwrap();
    check_golden("raster/01_circle.png", &img.to_png().unwrap()).unwrap();
    let golden =
        RasterImage::from_png(&std::fs::read(common::golden("raster/01_circle.png")).unwrap())
            .unwrap();
    assert_eq!(visual_distance(&img, &golden).unwrap(), 0.0);
    // centre of the red circle, and a transparent corner
    assert_eq!(img.pixel(128, 128), [220, 30, 30, 255]);
    assert_eq!(img.pixel(2, 2), [0, 0, 0, 0]);
}

#[test]
fn rendering_is_deterministic() {
    for (name, src) in corpus() {
        let doc = parse_svg(&src).unwrap();
        match (rasterize_default(&doc), rasterize_default(&doc)) {
            (Ok(a), Ok(b)) => assert_eq!(a, b, "{name}"),
            (Err(SvgError::RenderUnsupported { .. }), Err(_)) => {}
            other => panic!("{name}: {other:?}"),
        }
    }
}

fn check_simplify(name: &str, doc: &SvgDocument) {
    let once = simplify_rules(doc);
    let twice = simplify_rules(&once);
    assert_eq!(once, twice, "{name}: not idempotent");
    assert!(once.element_count <= doc.element_count, "{name}: grew");
    once.check_unique_ids().unwrap();
    match rasterize_default(doc) {
        Ok(before) => {
            let after = rasterize_default(&once).unwrap();
            let rmse = visual_distance(&before, &after).unwrap();
            assert!(rmse <= VISUAL_TOLERANCE, "{name}: rmse {rmse}");
            let guarded = simplify(doc).unwrap();
            assert_eq!(simplify(&guarded).unwrap(), guarded, "{name}");
        }
        Err(SvgError::RenderUnsupported { .. }) => {
            assert!(matches!(
                simplify(doc),
                Err(SvgError::RenderUnsupported { .. })
            ));
        }
        Err(e) => panic!("{name}: {e}"),
    }
}

#[test]
fn simplify_properties_on_corpus() {
    let mut shrunk = 0;
    for (name, src) in corpus() {
        let doc = parse_svg(&src).unwrap();
        check_simplify(&name, &doc);
        if simplify_rules(&doc).element_count < doc.element_count {
            shrunk += 1;
        }
    }
    assert!(shrunk >= 5, "only {shrunk} files simplified");
}

/// Random trees of shapes wrapped in bare groups, identity transforms,
/// single-child transformed groups and unused defs.
fn arb_element(depth: u32) -> BoxedStrategy<ElementNode> {
    let colours = prop::sample::select(vec!["#dc1e1e", "#1e50dc", "#28aa3c", "#000"]);
    let leaf = (0u32..60, 0u32..60, 4u32..30, colours)
        .prop_map(|(x, y, s, c)| {
            ElementNode::new("rect")
                .with_attr("x", x.to_string())
                .with_attr("y", y.to_string())
                .with_attr("width", s.to_string())
                .with_attr("height", s.to_string())
                .with_attr("fill", c)
        })
        .boxed();
    if depth == 0 {
        return leaf;
    }
    let inner = prop::collection::vec(arb_element(depth - 1), 0..3);
    prop_oneof![
        3 => leaf,
        2 => inner.clone().prop_map(|kids| kids.into_iter().fold(ElementNode::new("g"), ElementNode::with_child)),
        1 => inner.clone().prop_map(|kids| kids
            .into_iter()
            .fold(ElementNode::new("g").with_attr("transform", "translate(0 0)"), ElementNode::with_child)),
        1 => (arb_element(depth - 1), 1u32..10).prop_map(|(kid, d)| ElementNode::new("g")
            .with_attr("transform", format!("translate({d} {d})"))
            .with_child(kid)),
        1 => Just(ElementNode::new("defs").with_child(
            ElementNode::new("linearGradient").with_attr("id", "unused").with_child(ElementNode::new("stop"))
        )),
    ]
    .boxed()
}

fn arb_document() -> impl Strategy<Value = SvgDocument> {
    prop::collection::vec(arb_element(3), 0..4).prop_filter_map("duplicate ids", |kids| {
        let root = kids.into_iter().fold(
            ElementNode::new("svg").with_attr("viewBox", "0 0 100 100"),
            ElementNode::with_child,
        );
        SvgDocument::from_root(root).ok()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn simplify_properties_on_generated_documents(doc in arb_document()) {
        check_simplify("generated", &doc);
    }

    #[test]
    fn serialize_parse_round_trip_on_generated(doc in arb_document()) {
        let again = parse_svg(&serialize_svg(&doc)).unwrap();
        prop_assert_eq!(doc, again);
    }
}
