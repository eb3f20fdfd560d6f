use std::io::Read;

use splatview::io::{gen_synthetic, SyntheticSpec};
use splatview::render::LinearHead;
use splatview::scene::Scene;
use splatview::serve::{start, CameraInfo, ServeOptions, ServerHandle};

fn scene(views: usize, size: usize) -> Scene {
    gen_synthetic(&SyntheticSpec {
        width: size,
        height: size,
        views,
        seed: 21,
        ..Default::default()
    })
    .unwrap()
    .scene
}

fn serve(views: usize) -> (ServerHandle, String, Scene) {
    serve_sized(views, 48)
}

fn serve_sized(views: usize, size: usize) -> (ServerHandle, String, Scene) {
    let s = scene(views, size);
    let h = start(s.clone(), LinearHead::identity(), "127.0.0.1:0", ServeOptions::default()).unwrap();
    let base = format!("http://127.0.0.1:{}", h.port());
    (h, base, s)
}

fn status_of(r: Result<ureq::Response, ureq::Error>) -> (u16, ureq::Response) {
    match r {
        Ok(resp) => (resp.status(), resp),
        Err(ureq::Error::Status(code, resp)) => (code, resp),
        Err(e) => panic!("transport error: {e}"),
    }
}

fn body_bytes(resp: ureq::Response) -> Vec<u8> {
    let mut out = Vec::new();
    resp.into_reader().read_to_end(&mut out).unwrap();
    out
}

fn pose_json(c: &CameraInfo) -> String {
    serde_json::json!({ "rotation": c.rotation, "translation": c.translation }).to_string()
}

fn decode_png(bytes: &[u8]) -> (usize, usize, Vec<u8>) {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info().unwrap();
    let mut buf = vec![0; reader.output_buffer_size().unwrap()];
    let info = reader.next_frame(&mut buf).unwrap();
    assert_eq!(info.color_type, png::ColorType::Rgb);
    buf.truncate(info.buffer_size());
    (info.width as usize, info.height as usize, buf)
}

fn cameras(base: &str) -> Vec<CameraInfo> {
    let (code, resp) = status_of(ureq::get(&format!("{base}/api/cameras")).call());
    assert_eq!(code, 200);
    assert_eq!(resp.header("Access-Control-Allow-Origin"), Some("*"));
    serde_json::from_slice(&body_bytes(resp)).unwrap()
}

#[test]
fn cameras_lists_every_view() {
    let (h, base, s) = serve(3);
    let cams = cameras(&base);
    assert_eq!(cams.len(), 3);
    for (c, v) in cams.iter().zip(&s.views) {
        assert_eq!(c.id, v.id);
        assert_eq!((c.width, c.height), (48, 48));
        assert_eq!(c.rotation.len(), 9);
        assert_eq!(c.translation.len(), 3);
        assert_eq!(c.mu, 1.0);
    }
    h.shutdown();
}

#[test]
fn render_at_a_stored_pose_reproduces_the_view() {
    let (h, base, s) = serve_sized(1, 128);
    let cam = &cameras(&base)[0];
    let (code, resp) = status_of(
        ureq::post(&format!("{base}/api/render"))
            .set("Content-Type", "application/json")
            .send_string(&pose_json(cam)),
    );
    assert_eq!(code, 200);
    assert_eq!(resp.header("Content-Type"), Some("image/png"));
    assert_eq!(resp.header("X-Selected-Views"), Some("0"));
    assert!(resp.header("X-Render-Millis").unwrap().parse::<u64>().is_ok());
    let (w, hgt, rgb) = decode_png(&body_bytes(resp));
    assert_eq!((w, hgt), (128, 128));
    let stored = &s.views[0].color.data;
    let mse: f64 = rgb.iter().zip(stored).map(|(a, b)| (*a as f64 / 255.0 - b).powi(2)).sum::<f64>() / stored.len() as f64;
    let psnr = -10.0 * mse.log10();
    assert!(psnr >= 40.0, "PSNR {psnr}");
    h.shutdown();
}

#[test]
fn render_honours_size_and_view_count() {
    let (h, base, _) = serve(3);
    let cam = &cameras(&base)[1];
    let body = serde_json::json!({
        "rotation": cam.rotation, "translation": cam.translation,
        "width": 24, "height": 16, "k": 2, "fast": true
    });
    let (code, resp) = status_of(ureq::post(&format!("{base}/api/render")).send_string(&body.to_string()));
    assert_eq!(code, 200);
    assert_eq!(resp.header("X-Selected-Views").unwrap().split(',').count(), 2);
    let (w, hgt, _) = decode_png(&body_bytes(resp));
    assert_eq!((w, hgt), (24, 16));
    h.shutdown();
}

#[test]
fn bad_requests_get_client_errors() {
    let (h, base, _) = serve(2);
    let url = format!("{base}/api/render");
    let bad_rotation = r#"{"rotation":[1,0,0,0,1,0,0,0],"translation":[0,0,0]}"#;
    let (code, resp) = status_of(ureq::post(&url).send_string(bad_rotation));
    assert_eq!(code, 400);
    let err: serde_json::Value = serde_json::from_slice(&body_bytes(resp)).unwrap();
    assert!(err["error"].as_str().unwrap().contains("rotation"));

    assert_eq!(status_of(ureq::post(&url).send_string("{not json")).0, 400);
    let zero_k = r#"{"rotation":[1,0,0,0,1,0,0,0,1],"translation":[0,0,0],"k":0}"#;
    assert_eq!(status_of(ureq::post(&url).send_string(zero_k)).0, 400);
    let not_rotation = r#"{"rotation":[2,0,0,0,1,0,0,0,1],"translation":[0,0,0]}"#;
    assert_eq!(status_of(ureq::post(&url).send_string(not_rotation)).0, 400);
    assert_eq!(status_of(ureq::get(&url).call()).0, 405);
    assert_eq!(status_of(ureq::get(&format!("{base}/nope")).call()).0, 404);
    assert_eq!(status_of(ureq::get(&format!("{base}/api/weights?translation=0,0,0")).call()).0, 400);

    let (code, resp) = status_of(ureq::request("OPTIONS", &url).call());
    assert_eq!(code, 204);
    assert!(resp.header("Access-Control-Allow-Methods").unwrap().contains("POST"));
    h.shutdown();
}

#[test]
fn weights_are_shares_of_the_selected_views() {
    let (h, base, _) = serve(3);
    let cam = &cameras(&base)[0];
    let list = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",");
    let url = format!(
        "{base}/api/weights?rotation={}&translation={}&width=24&height=24",
        list(&cam.rotation),
        list(&cam.translation)
    );
    let (code, resp) = status_of(ureq::get(&url).call());
    assert_eq!(code, 200);
    let w: std::collections::BTreeMap<String, f64> = serde_json::from_slice(&body_bytes(resp)).unwrap();
    assert_eq!(w.len(), 3);
    let total: f64 = w.values().sum();
    assert!((total - 1.0).abs() < 1e-9, "total {total}");
    assert!(w.values().all(|x| *x > 0.0));
    h.shutdown();
}

#[test]
fn concurrent_requests_all_complete() {
    let (h, base, _) = serve(2);
    let cam = cameras(&base)[0].clone();
    let threads: Vec<_> = (0..6)
        .map(|i| {
            let url = format!("{base}/api/render");
            let body = serde_json::json!({
                "rotation": cam.rotation, "translation": cam.translation, "width": 16 + i, "height": 16
            })
            .to_string();
            std::thread::spawn(move || {
                let (code, resp) = status_of(ureq::post(&url).send_string(&body));
                assert_eq!(code, 200);
                decode_png(&body_bytes(resp)).0
            })
        })
        .collect();
    let widths: Vec<usize> = threads.into_iter().map(|t| t.join().unwrap()).collect();
    assert_eq!(widths, (16..22).collect::<Vec<_>>());
    h.shutdown();
}
