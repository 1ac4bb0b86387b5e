use proptest::prelude::*;

use super::*;

fn square(cx: f64, cy: f64, half: f64) -> Polygon {
    Polygon::new(vec![
        Point2::new(cx - half, cy - half),
        Point2::new(cx + half, cy - half),
        Point2::new(cx + half, cy + half),
        Point2::new(cx - half, cy + half),
    ])
    .unwrap()
}

fn scene(users: Vec<Point2>, obstacles: Vec<Polygon>) -> Scene {
    Scene::new(vec![Point2::new(15.0, 0.0)], users, obstacles, 0.5).unwrap()
}

/// Raster with a filled axis-aligned square of pixels `[x0, x1] x [y0, y1]`.
fn pixel_square(w: usize, x0: usize, x1: usize, y0: usize, y1: usize, level: u8) -> Raster {
    let mut r = Raster::blank(RasterGeometry::centered(w, w, 0.1)).unwrap();
    for y in y0..=y1 {
        for x in x0..=x1 {
            r.set(x, y, level);
        }
    }
    r
}

#[test]
fn raster_invariants_enforced() {
    assert!(Raster::blank(RasterGeometry::centered(15, 20, 0.1)).is_err());
    assert!(Raster::blank(RasterGeometry::centered(16, 16, 0.0)).is_err());
    assert!(Raster::new(RasterGeometry::centered(16, 16, 0.1), vec![0; 10]).is_err());
    let small = Scene::new(vec![Point2::new(1.0, 0.0)], vec![Point2::new(0.0, 1.0)], vec![], 0.5).unwrap();
    assert!(render_top_view(&small, RasterGeometry::centered(63, 63, 0.1)).is_err());
}

#[test]
fn pixel_world_mapping_round_trips() {
    let g = RasterGeometry::default();
    assert_eq!(g.pixel_to_world(200.0, 200.0), Point2::new(0.0, 0.0));
    let p = g.pixel_to_world(0.0, 400.0);
    assert!((p.x + 20.0).abs() < 1e-12 && (p.y - 20.0).abs() < 1e-12);
    let (x, y) = g.world_to_pixel(&Point2::new(3.3, -1.7));
    assert!((x - 233.0).abs() < 1e-9 && (y - 183.0).abs() < 1e-9);
}

#[test]
fn scene_without_content_renders_blank() {
    // a user is required by the scene type; put it off to one side and mask it
    let s = scene(vec![Point2::new(0.0, 0.0)], vec![]);
    let r = render_top_view(&s, RasterGeometry::default()).unwrap();
    let lit = r.pixels().iter().filter(|&&v| v != 0).count();
    assert!(lit > 0);
    assert!(r.pixels().iter().all(|&v| v == 0 || v == USER_LEVEL));
    let blank = Raster::blank(RasterGeometry::default()).unwrap();
    assert!(blank.pixels().iter().all(|&v| v == 0));
    assert!(detect_objects(&blank, 0.5).unwrap().is_empty());
}

#[test]
fn user_at_origin_is_centered() {
    let s = scene(vec![Point2::new(0.0, 0.0)], vec![]);
    let r = render_top_view(&s, RasterGeometry::default()).unwrap();
    assert_eq!(r.get(200, 200), USER_LEVEL);
    let objs = detect_objects(&r, 0.5).unwrap();
    assert_eq!(objs.len(), 1);
    assert_eq!(objs[0].bbox.center(), (200.0, 200.0));
    // symmetric disc: 0.5 m = 5 px radius
    assert_eq!(objs[0].bbox, BBox { x: 195, y: 195, w: 11, h: 11 });
}

#[test]
fn render_rejects_out_of_frame_content() {
    let s = scene(vec![Point2::new(19.8, 0.0)], vec![]);
    assert!(matches!(render_top_view(&s, RasterGeometry::default()), Err(VisionError::OutOfFrame { .. })));
    let s = scene(vec![Point2::new(1.0, 1.0)], vec![square(-19.0, 5.0, 2.0)]);
    assert!(matches!(render_top_view(&s, RasterGeometry::default()), Err(VisionError::OutOfFrame { .. })));
}

#[test]
fn disc_detected_at_its_center() {
    // 10 px radius at 0.05 m/px is the user radius
    let g = RasterGeometry::centered(201, 201, 0.05);
    let u = g.pixel_to_world(100.0, 100.0);
    let r = render_top_view(&scene(vec![u], vec![]), g).unwrap();
    let objs = detect_objects(&r, 0.5).unwrap();
    assert_eq!(objs.len(), 1);
    assert_eq!(objs[0].category, Category::User);
    let (cx, cy) = objs[0].bbox.center();
    assert!((cx - 100.0).abs() <= 1.0 && (cy - 100.0).abs() <= 1.0);
    // 317 lattice points lie within radius 10 of a pixel centre
    assert!((objs[0].score - 317.0 / 441.0).abs() < 0.02, "{}", objs[0].score);
}

#[test]
fn disc_and_square_give_two_objects() {
    let s = scene(vec![Point2::new(-5.0, 3.0)], vec![square(6.0, -4.0, 2.0)]);
    let r = render_top_view(&s, RasterGeometry::default()).unwrap();
    let objs = detect_objects(&r, 0.5).unwrap();
    assert_eq!(objs.len(), 2);
    let cats: Vec<Category> = objs.iter().map(|o| o.category).collect();
    assert!(cats.contains(&Category::User) && cats.contains(&Category::Obstacle));
    let sq = objs.iter().find(|o| o.category == Category::Obstacle).unwrap();
    assert_eq!(sq.score, 1.0);
    assert_eq!(sq.bbox, BBox { x: 240, y: 140, w: 41, h: 41 });
}

#[test]
fn threshold_suppresses_sparse_blobs() {
    // an L shape fills 3 of the 4 quadrants of its box... here a thin diagonal
    let mut r = Raster::blank(RasterGeometry::centered(64, 64, 0.1)).unwrap();
    for i in 10..40 {
        r.set(i, i, OBSTACLE_LEVEL);
    }
    assert!(detect_objects(&r, 0.5).unwrap().is_empty());
    let objs = detect_objects(&r, 0.01).unwrap();
    assert_eq!(objs.len(), 1);
    assert!((objs[0].score - 1.0 / 30.0).abs() < 1e-12);
    assert!(detect_objects(&r, 0.0).is_err());
    assert!(detect_objects(&r, 1.0).is_err());
}

#[test]
fn crop_examples() {
    let r = pixel_square(64, 20, 30, 20, 30, OBSTACLE_LEVEL);
    let full = crop(&r, BBox { x: 0, y: 0, w: 64, h: 64 }, 0).unwrap();
    assert_eq!(full, r);
    let c = crop(&r, BBox { x: 10, y: 10, w: 5, h: 5 }, 2).unwrap();
    assert_eq!((c.width(), c.height()), (9, 9));
    assert_eq!(c.world_origin(), r.geometry().pixel_to_world(8.0, 8.0));
    let edge = crop(&r, BBox { x: 60, y: 0, w: 4, h: 3 }, 5).unwrap();
    assert_eq!((edge.width(), edge.height()), (9, 8));
    assert!(matches!(crop(&r, BBox { x: 64, y: 0, w: 3, h: 3 }, 1), Err(VisionError::EmptyCrop)));
    assert!(matches!(crop(&r, BBox { x: 0, y: 0, w: 0, h: 3 }, 1), Err(VisionError::EmptyCrop)));
}

#[test]
fn cropped_pixels_keep_world_positions() {
    let r = pixel_square(64, 20, 30, 20, 30, OBSTACLE_LEVEL);
    let c = crop(&r, BBox { x: 18, y: 22, w: 7, h: 9 }, 3).unwrap();
    for y in 0..c.height() {
        for x in 0..c.width() {
            let w = c.geometry().pixel_to_world(x as f64, y as f64);
            let (px, py) = r.geometry().world_to_pixel(&w);
            assert_eq!(c.get(x, y), r.get(px.round() as usize, py.round() as usize));
        }
    }
}

#[test]
fn constant_raster_has_no_edges() {
    let r = Raster::new(RasterGeometry::centered(32, 32, 0.1), vec![137; 32 * 32]).unwrap();
    assert_eq!(canny_edges(&r, DEFAULT_LOW, DEFAULT_HIGH).unwrap().count(), 0);
    assert!(canny_edges(&r, 100.0, 40.0).is_err());
    assert!(canny_edges(&r, -1.0, 40.0).is_err());
    assert!(canny_edges(&r, 10.0, 256.0).is_err());
}

#[test]
fn square_edges_hug_the_boundary() {
    let r = pixel_square(80, 20, 50, 25, 60, OBSTACLE_LEVEL);
    let e = canny_edges(&r, DEFAULT_LOW, DEFAULT_HIGH).unwrap();
    assert!(e.count() > 100);
    // boundary between pixel centres runs at x = 19.5, 50.5 and y = 24.5, 60.5
    for y in 0..80 {
        for x in 0..80 {
            if e.get(x, y) {
                let (fx, fy) = (x as f64, y as f64);
                let dx = (fx - 19.5).abs().min((fx - 50.5).abs());
                let dy = (fy - 24.5).abs().min((fy - 60.5).abs());
                let inside_x = (19.5..=50.5).contains(&fx);
                let inside_y = (24.5..=60.5).contains(&fy);
                let d = match (inside_x, inside_y) {
                    (true, true) => dx.min(dy),
                    (true, false) => dy,
                    (false, true) => dx,
                    (false, false) => dx.hypot(dy),
                };
                assert!(d <= 1.5, "edge pixel ({x}, {y}) is {d} px from the boundary");
            }
        }
    }
    // one closed contour covering all four sides
    let contours = trace_contours(&e);
    assert_eq!(contours.len(), 1);
    assert_eq!(contours[0].len(), e.count());
}

#[test]
fn step_contrast_versus_thresholds() {
    let step = |level: u8| {
        let mut r = Raster::blank(RasterGeometry::centered(40, 40, 0.1)).unwrap();
        for y in 0..40 {
            for x in 20..40 {
                r.set(x, y, level);
            }
        }
        r
    };
    // blurred unit step peaks near 2.85 in raw Sobel magnitude per intensity level
    let strong = canny_edges(&step(90), DEFAULT_LOW, DEFAULT_HIGH).unwrap();
    assert!(strong.count() >= 40);
    let faint = canny_edges(&step(10), DEFAULT_LOW, DEFAULT_HIGH).unwrap();
    assert_eq!(faint.count(), 0);
}

#[test]
fn hysteresis_is_idempotent() {
    let r = pixel_square(64, 10, 40, 15, 45, OBSTACLE_LEVEL);
    let e = canny_edges(&r, DEFAULT_LOW, DEFAULT_HIGH).unwrap();
    let mag: Vec<f64> = e.data.iter().map(|&v| v as f64 * 255.0).collect();
    assert_eq!(hysteresis(&mag, 64, 64, DEFAULT_LOW, DEFAULT_HIGH), e);
}

#[test]
fn gaussian_preserves_constants() {
    let img = vec![42.0; 100];
    assert!(gaussian_blur(&img, 10, 10).iter().all(|v| (v - 42.0).abs() < 1e-12));
    let (gx, gy) = sobel(&img, 10, 10);
    assert!(gx.iter().chain(&gy).all(|&v| v == 0.0));
}

#[test]
fn moore_trace_of_a_ring() {
    let mut e = EdgeMap { width: 8, height: 8, data: vec![0; 64] };
    for i in 2..6 {
        for (x, y) in [(i, 2), (i, 5), (2, i), (5, i)] {
            e.data[y * 8 + x] = 1;
        }
    }
    let c = longest_contour(&e).unwrap();
    assert_eq!(c.len(), 12);
    // clockwise on screen from the top-left pixel
    assert_eq!(&c[..4], &[(2, 2), (3, 2), (4, 2), (5, 2)]);
    assert_eq!(c[4], (5, 3));
    let empty = EdgeMap { width: 8, height: 8, data: vec![0; 64] };
    assert!(longest_contour(&empty).is_none());
    assert!(matches!(approx_polygon(&empty, 2.0), Err(VisionError::NoContour)));
    assert!(approx_polygon(&e, 0.0).is_err());
}

#[test]
fn rendered_square_gives_four_corners() {
    let r = pixel_square(80, 20, 50, 25, 60, OBSTACLE_LEVEL);
    let e = canny_edges(&r, DEFAULT_LOW, DEFAULT_HIGH).unwrap();
    let vs = approx_polygon(&e, 2.0).unwrap();
    assert_eq!(vs.vertices.len(), 4, "{:?}", vs.vertices);
    let corners = [(19.5, 24.5), (50.5, 24.5), (50.5, 60.5), (19.5, 60.5)];
    for v in &vs.vertices {
        let d = corners.iter().map(|c| (v.x - c.0).hypot(v.y - c.1)).fold(f64::INFINITY, f64::min);
        assert!(d <= 2.0, "{v:?} is {d} px from every corner");
    }
}

#[test]
fn rendered_triangle_gives_three_vertices() {
    let tri = Polygon::new(vec![Point2::new(3.0, 2.0), Point2::new(10.0, 3.0), Point2::new(6.5, 8.0)]).unwrap();
    let s = scene(vec![Point2::new(-10.0, 10.0)], vec![tri.clone()]);
    let r = render_top_view(&s, RasterGeometry::default()).unwrap();
    let objs = detect_objects(&r, 0.3).unwrap();
    let obj = objs.iter().find(|o| o.category == Category::Obstacle).unwrap();
    let c = isolate(&r, obj.bbox, 4).unwrap();
    let vs = approx_polygon(&canny_edges(&c, DEFAULT_LOW, DEFAULT_HIGH).unwrap(), 2.0).unwrap();
    assert_eq!(vs.vertices.len(), 3, "{:?}", vs.vertices);
}

#[test]
fn circle_simplifies_to_few_vertices() {
    let radius = 20.0;
    let pts: Vec<Point2> = (0..400)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / 400.0;
            Point2::new(50.0 + radius * a.cos(), 50.0 + radius * a.sin())
        })
        .collect();
    let idx = douglas_peucker_closed(&pts, radius / 2.0);
    assert!(idx.len() >= 3 && idx.len() <= 8, "{} vertices", idx.len());
    assert!(idx.windows(2).all(|w| w[0] < w[1]));

    let g = RasterGeometry::centered(101, 101, 0.1);
    let mut r = Raster::blank(g).unwrap();
    for y in 0..101 {
        for x in 0..101 {
            if ((x as f64 - 50.0).powi(2) + (y as f64 - 50.0).powi(2)).sqrt() <= radius {
                r.set(x, y, OBSTACLE_LEVEL);
            }
        }
    }
    let vs = approx_polygon(&canny_edges(&r, DEFAULT_LOW, DEFAULT_HIGH).unwrap(), radius / 2.0).unwrap();
    assert!(vs.vertices.len() <= 8);
}

#[test]
fn user_recovered_within_tolerance() {
    let s = scene(vec![Point2::new(5.0, 5.0)], vec![]);
    let r = render_top_view(&s, RasterGeometry::default()).unwrap();
    let objs = detect_objects(&r, 0.5).unwrap();
    let rec = recover_coordinates(&objs, &r, &RecoverConfig::default()).unwrap();
    assert_eq!(rec.users.len(), 1);
    assert!(rec.users[0].dist(&Point2::new(5.0, 5.0)) <= 0.2, "{:?}", rec.users[0]);
    let none = recover_coordinates(&[], &r, &RecoverConfig::default()).unwrap();
    assert!(none.users.is_empty() && none.obstacles.is_empty());
}

#[test]
fn square_obstacle_corners_recovered() {
    let truth = square(-6.0, 4.0, 2.5);
    let s = scene(vec![Point2::new(8.0, -8.0)], vec![truth.clone()]);
    let r = render_top_view(&s, RasterGeometry::default()).unwrap();
    let objs = detect_objects(&r, 0.5).unwrap();
    let rec = recover_coordinates(&objs, &r, &RecoverConfig::default()).unwrap();
    assert_eq!(rec.obstacles.len(), 1);
    let got = rec.obstacles[0].vertices();
    assert_eq!(got.len(), 4);
    let tol = 2.0 * r.meters_per_pixel();
    for v in truth.vertices() {
        let d = got.iter().map(|g| g.dist(v)).fold(f64::INFINITY, f64::min);
        assert!(d <= tol, "corner {v:?} off by {d} m");
    }
}

#[test]
fn crop_then_recover_matches_full_frame() {
    let s = scene(vec![Point2::new(-7.0, -3.0), Point2::new(9.0, 9.0)], vec![square(3.0, 2.0, 2.0)]);
    let r = render_top_view(&s, RasterGeometry::default()).unwrap();
    let objs = detect_objects(&r, 0.5).unwrap();
    let full = recover_coordinates(&objs, &r, &RecoverConfig::default()).unwrap();
    // re-run on a sub-frame holding all objects, with boxes shifted into it
    let window = BBox { x: 100, y: 100, w: 220, h: 220 };
    let sub = crop(&r, window, 0).unwrap();
    let shifted: Vec<DetectedObject> =
        objs.iter().map(|o| DetectedObject { bbox: BBox { x: o.bbox.x - 100, y: o.bbox.y - 100, ..o.bbox }, ..o.clone() }).collect();
    assert_eq!(detect_objects(&sub, 0.5).unwrap(), shifted);
    let part = recover_coordinates(&shifted, &sub, &RecoverConfig::default()).unwrap();
    for (a, b) in full.users.iter().zip(&part.users) {
        assert!(a.dist(b) < 1e-9);
    }
    for (a, b) in full.obstacles.iter().zip(&part.obstacles) {
        for (p, q) in a.vertices().iter().zip(b.vertices()) {
            assert!(p.dist(q) < 1e-9);
        }
    }
}

#[test]
fn recovered_scene_selects_same_ris() {
    let ris = vec![Point2::new(10.0, 0.0), Point2::new(-10.0, 0.0), Point2::new(0.0, 12.0)];
    let obstacles = vec![square(5.0, 0.0, 1.5), square(-3.0, -6.0, 2.0)];
    let users = vec![Point2::new(12.0, 5.0), Point2::new(9.0, -6.0)];
    let truth = Scene::new(ris.clone(), users, obstacles, 0.5).unwrap();
    let r = render_top_view(&truth, RasterGeometry::default()).unwrap();
    let seen = recover_scene(&r, ris, 0.5, DEFAULT_THRESHOLD, &RecoverConfig::default()).unwrap();
    assert_eq!(seen.users().len(), 2);
    assert_eq!(seen.obstacles().len(), 2);
    assert_eq!(seen.select_ris().unwrap(), truth.select_ris().unwrap());
}

#[test]
fn pgm_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("frame.pgm");
    let s = scene(vec![Point2::new(1.0, 2.0)], vec![square(-4.0, -4.0, 1.0)]);
    let r = render_top_view(&s, RasterGeometry::centered(121, 97, 0.125)).unwrap();
    write_pgm(&path, &r).unwrap();
    assert!(sidecar_path(&path).exists());
    assert_eq!(read_pgm(&path).unwrap(), r);

    let bytes = std::fs::read(&path).unwrap();
    let mut commented = b"P5\n# made by hand\n121 97\n255\n".to_vec();
    commented.extend_from_slice(&bytes[bytes.len() - 121 * 97..]);
    std::fs::write(&path, commented).unwrap();
    assert_eq!(read_pgm(&path).unwrap(), r);

    std::fs::write(&path, b"P2\n2 2\n255\n0 0 0 0").unwrap();
    assert!(matches!(read_pgm(&path), Err(VisionError::Format(_))));
    std::fs::write(&path, b"P5\n20 20\n255\n\0\0").unwrap();
    assert!(matches!(read_pgm(&path), Err(VisionError::Format(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn vertex_count_non_increasing_in_epsilon(
        pts in proptest::collection::vec((0.0f64..50.0, 0.0f64..50.0), 3..60),
        e1 in 0.1f64..10.0,
        de in 0.0f64..10.0,
    ) {
        // points sorted by angle form a simple closed curve
        let cx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
        let cy = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
        let mut pts = pts;
        pts.sort_by(|a, b| (a.1 - cy).atan2(a.0 - cx).total_cmp(&(b.1 - cy).atan2(b.0 - cx)));
        let curve: Vec<Point2> = pts.iter().map(|&(x, y)| Point2::new(x, y)).collect();
        let a = douglas_peucker_closed(&curve, e1).len();
        let b = douglas_peucker_closed(&curve, e1 + de).len();
        prop_assert!(b <= a, "{a} vertices at {e1}, {b} at {}", e1 + de);
    }

    #[test]
    fn recovery_is_translation_equivariant(sx in -20i32..20, sy in -20i32..20, seed in 0u64..1000) {
        let mpp = 0.1;
        // off-lattice placement keeps pixel-centre tests away from exact ties
        let base_user = Point2::new(-6.013 + (seed % 7) as f64 * 0.3, 7.021);
        let base_obs = square(4.017, -3.011 - (seed % 5) as f64 * 0.2, 1.83);
        let (dx, dy) = (sx as f64 * mpp, sy as f64 * mpp);
        let recover = |dx: f64, dy: f64| {
            let s = scene(vec![Point2::new(base_user.x + dx, base_user.y + dy)], vec![base_obs.translated(dx, dy)]);
            let r = render_top_view(&s, RasterGeometry::default()).unwrap();
            recover_coordinates(&detect_objects(&r, 0.5).unwrap(), &r, &RecoverConfig::default()).unwrap()
        };
        let a = recover(0.0, 0.0);
        let b = recover(dx, dy);
        prop_assert!((b.users[0].x - a.users[0].x - dx).abs() < 1e-9);
        prop_assert!((b.users[0].y - a.users[0].y - dy).abs() < 1e-9);
        let (pa, pb) = (a.obstacles[0].vertices(), b.obstacles[0].vertices());
        prop_assert_eq!(pa.len(), pb.len());
        for (p, q) in pa.iter().zip(pb) {
            prop_assert!((q.x - p.x - dx).abs() < 1e-9 && (q.y - p.y - dy).abs() < 1e-9);
        }
    }
}

#[test]
fn bridging_closes_short_gaps_only() {
    let mut e = EdgeMap { width: 20, height: 20, data: vec![0; 400] };
    for x in 2..8 {
        e.data[5 * 20 + x] = 1;
    }
    for x in 10..16 {
        e.data[5 * 20 + x] = 1;
    }
    let b = bridge_gaps(&e, BRIDGE_GAP);
    assert!((2..16).all(|x| b.get(x, 5)));
    assert_eq!(b.count(), 14);
    // a wider gap stays open
    let wide = bridge_gaps(&e, 2.0);
    assert_eq!(wide, e);
}

#[test]
fn rendered_polygon_vertex_count_non_increasing_in_epsilon() {
    let shapes = [
        vec![Point2::new(3.0, 2.0), Point2::new(10.0, 3.0), Point2::new(6.5, 8.0)],
        vec![Point2::new(2.0, 2.0), Point2::new(6.0, 1.5), Point2::new(8.0, 4.0), Point2::new(6.5, 7.0), Point2::new(3.0, 6.5)],
        vec![
            Point2::new(2.0, 2.0),
            Point2::new(7.0, 2.0),
            Point2::new(9.0, 5.0),
            Point2::new(7.0, 8.0),
            Point2::new(2.0, 8.0),
            Point2::new(1.0, 5.0),
        ],
    ];
    for verts in shapes {
        let s = scene(vec![Point2::new(-10.0, -10.0)], vec![Polygon::new(verts).unwrap()]);
        let r = render_top_view(&s, RasterGeometry::default()).unwrap();
        let obj = detect_objects(&r, 0.3).unwrap().into_iter().find(|o| o.category == Category::Obstacle).unwrap();
        let e = canny_edges(&isolate(&r, obj.bbox, 4).unwrap(), DEFAULT_LOW, DEFAULT_HIGH).unwrap();
        let counts: Vec<usize> = (1..=24).map(|i| approx_polygon(&e, i as f64 * 0.5).unwrap().vertices.len()).collect();
        assert!(counts.windows(2).all(|w| w[1] <= w[0]), "{counts:?}");
    }
}
