//! HTTP render server for interactive viewers.
//!
//! Connections are handled on several threads; renders go through one
//! worker thread in arrival order.

use std::collections::BTreeMap;
use std::io::Read;
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use tiny_http::{Header, Method, Request, Response, Server};

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::io::manifest::pose_parts;
use crate::io::{encode_png, Pose};
use crate::render::{render_novel, LinearHead, NovelRender, RenderOptions};
use crate::scene::Scene;

pub const DEFAULT_HANDLER_THREADS: usize = 4;
/// Largest accepted request body.
const MAX_BODY: u64 = 1 << 20;

#[derive(Clone, Debug)]
pub struct ServeOptions {
    pub handler_threads: usize,
    pub render: RenderOptions,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions {
            handler_threads: DEFAULT_HANDLER_THREADS,
            render: RenderOptions::default(),
        }
    }
}

/// One entry of `GET /api/cameras`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CameraInfo {
    pub id: u32,
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Vec<f64>,
    pub translation: Vec<f64>,
    pub mu: f64,
}

pub fn camera_list(scene: &Scene) -> Vec<CameraInfo> {
    scene
        .views
        .iter()
        .map(|v| {
            let c = &v.camera;
            let (rotation, translation) = pose_parts(c);
            CameraInfo {
                id: v.id,
                width: c.width,
                height: c.height,
                fx: c.fx,
                fy: c.fy,
                cx: c.cx,
                cy: c.cy,
                rotation,
                translation,
                mu: v.mu,
            }
        })
        .collect()
}

/// Body of `POST /api/render`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderRequest {
    #[serde(flatten)]
    pub pose: Pose,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub fast: Option<bool>,
}

impl RenderRequest {
    /// Parses the query string of `GET /api/weights`: comma-separated
    /// `rotation` and `translation`, optional `width`, `height`, `k`, `fast`.
    pub fn from_query(query: &str) -> Result<Self> {
        let fields: BTreeMap<String, String> = form_urlencoded::parse(query.as_bytes()).into_owned().collect();
        let list = |name: &str| -> Result<Vec<f64>> {
            let raw = fields.get(name).ok_or_else(|| Error::invalid(format!("missing {name}")))?;
            raw.split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|_| Error::invalid(format!("bad number in {name}: {x:?}"))))
                .collect()
        };
        fn opt<T: std::str::FromStr>(fields: &BTreeMap<String, String>, name: &str) -> Result<Option<T>> {
            fields
                .get(name)
                .map(|v| v.parse::<T>().map_err(|_| Error::invalid(format!("bad {name}: {v:?}"))))
                .transpose()
        }
        Ok(RenderRequest {
            pose: Pose {
                rotation: list("rotation")?,
                translation: list("translation")?,
                width: opt(&fields, "width")?,
                height: opt(&fields, "height")?,
                fx: opt(&fields, "fx")?,
                fy: opt(&fields, "fy")?,
                cx: opt(&fields, "cx")?,
                cy: opt(&fields, "cy")?,
            },
            k: opt(&fields, "k")?,
            fast: opt(&fields, "fast")?,
        })
    }

    fn camera(&self, scene: &Scene) -> Result<CameraModel> {
        if self.k == Some(0) {
            return Err(Error::invalid("k must be at least 1"));
        }
        self.pose.camera(&scene.views[0].camera)
    }
}

struct Job {
    camera: CameraModel,
    opts: RenderOptions,
    reply: Sender<Result<(NovelRender, u128)>>,
}

/// A running server. Dropping it without [`ServerHandle::shutdown`] leaves
/// the threads running until the process exits.
pub struct ServerHandle {
    port: u16,
    server: Arc<Server>,
    handlers: Vec<JoinHandle<()>>,
    worker: Option<JoinHandle<()>>,
    jobs: Option<Sender<Job>>,
}

impl ServerHandle {
    pub fn port(&self) -> u16 {
        self.port
    }

    /// Stops accepting connections and joins all threads.
    pub fn shutdown(mut self) {
        self.server.unblock();
        for _ in 1..self.handlers.len() {
            self.server.unblock();
        }
        for h in self.handlers.drain(..) {
            let _ = h.join();
        }
        self.jobs.take();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }

    /// Blocks until the server stops.
    pub fn join(mut self) {
        for h in self.handlers.drain(..) {
            let _ = h.join();
        }
    }
}

/// Binds `addr` (port 0 picks a free port) and starts serving `scene`.
pub fn start(scene: Scene, head: LinearHead, addr: &str, opts: ServeOptions) -> Result<ServerHandle> {
    scene.validate()?;
    let server = Server::http(addr).map_err(|e| Error::invalid(format!("cannot bind {addr}: {e}")))?;
    let port = server.server_addr().to_ip().map(|a| a.port()).unwrap_or(0);
    let server = Arc::new(server);
    let scene = Arc::new(scene);

    let (tx, rx) = mpsc::channel::<Job>();
    let worker = {
        let scene = Arc::clone(&scene);
        std::thread::spawn(move || render_worker(&scene, &head, rx))
    };
    let handlers = (0..opts.handler_threads.max(1))
        .map(|_| {
            let server = Arc::clone(&server);
            let scene = Arc::clone(&scene);
            let tx = tx.clone();
            let render = opts.render;
            std::thread::spawn(move || {
                while let Ok(req) = server.recv() {
                    handle(req, &scene, &tx, &render);
                }
            })
        })
        .collect();
    log::info!("serving {} views on port {port}", scene.views.len());
    Ok(ServerHandle {
        port,
        server,
        handlers,
        worker: Some(worker),
        jobs: Some(tx),
    })
}

fn render_worker(scene: &Scene, head: &LinearHead, jobs: Receiver<Job>) {
    for job in jobs {
        let t0 = Instant::now();
        let out = render_novel(scene, &job.camera, &job.opts, head).map(|r| (r, t0.elapsed().as_millis()));
        let _ = job.reply.send(out);
    }
}

fn header(name: &str, value: &str) -> Header {
    Header::from_bytes(name.as_bytes(), value.as_bytes()).expect("valid header")
}

fn with_cors<R: std::io::Read>(r: Response<R>) -> Response<R> {
    r.with_header(header("Access-Control-Allow-Origin", "*"))
        .with_header(header("Access-Control-Expose-Headers", "X-Selected-Views, X-Render-Millis"))
}

fn json_response<T: Serialize>(status: u16, body: &T) -> Response<std::io::Cursor<Vec<u8>>> {
    let bytes = serde_json::to_vec(body).unwrap_or_else(|_| b"{}".to_vec());
    with_cors(Response::from_data(bytes).with_status_code(status).with_header(header("Content-Type", "application/json")))
}

fn error_response(status: u16, message: &str) -> Response<std::io::Cursor<Vec<u8>>> {
    json_response(status, &serde_json::json!({ "error": message }))
}

fn run_render(scene: &Scene, tx: &Sender<Job>, base: &RenderOptions, req: &RenderRequest) -> std::result::Result<(NovelRender, u128), (u16, String)> {
    let camera = req.camera(scene).map_err(|e| (400, e.to_string()))?;
    let mut opts = *base;
    if let Some(k) = req.k {
        opts.k = k;
    }
    if let Some(f) = req.fast {
        opts.fast = f;
    }
    let (reply, answer) = mpsc::channel();
    tx.send(Job { camera, opts, reply }).map_err(|_| (500, "render worker stopped".to_string()))?;
    match answer.recv() {
        Ok(Ok(r)) => Ok(r),
        Ok(Err(e)) => Err((500, e.to_string())),
        Err(_) => Err((500, "render worker stopped".to_string())),
    }
}

fn handle(mut req: Request, scene: &Scene, tx: &Sender<Job>, base: &RenderOptions) {
    let url = req.url().to_string();
    let (path, query) = url.split_once('?').unwrap_or((url.as_str(), ""));
    let method = req.method().clone();
    let result = match (&method, path) {
        (Method::Options, _) => req.respond(with_cors(
            Response::empty(204)
                .with_header(header("Access-Control-Allow-Methods", "GET, POST, OPTIONS"))
                .with_header(header("Access-Control-Allow-Headers", "Content-Type")),
        )),
        (Method::Get, "/api/cameras") => req.respond(json_response(200, &camera_list(scene))),
        (Method::Post, "/api/render") => {
            let mut body = String::new();
            let read = req.as_reader().take(MAX_BODY).read_to_string(&mut body);
            let parsed = read
                .map_err(|e| Error::invalid(format!("unreadable body: {e}")))
                .and_then(|_| serde_json::from_str::<RenderRequest>(&body).map_err(|e| Error::invalid(format!("bad pose: {e}"))));
            let response = match parsed {
                Err(e) => error_response(400, &e.to_string()),
                Ok(r) => match run_render(scene, tx, base, &r) {
                    Err((status, msg)) => error_response(status, &msg),
                    Ok((render, millis)) => match encode_png(&render.color) {
                        Err(e) => error_response(500, &e.to_string()),
                        Ok(png) => {
                            let ids: Vec<String> = render.view_ids.iter().map(|i| i.to_string()).collect();
                            with_cors(
                                Response::from_data(png)
                                    .with_header(header("Content-Type", "image/png"))
                                    .with_header(header("X-Selected-Views", &ids.join(",")))
                                    .with_header(header("X-Render-Millis", &millis.to_string())),
                            )
                        }
                    },
                },
            };
            req.respond(response)
        }
        (Method::Get, "/api/weights") => {
            let response = match RenderRequest::from_query(query) {
                Err(e) => error_response(400, &e.to_string()),
                Ok(r) => match run_render(scene, tx, base, &r) {
                    Err((status, msg)) => error_response(status, &msg),
                    Ok((render, millis)) => {
                        let weights: BTreeMap<String, f64> = render.mean_weights().into_iter().map(|(id, w)| (id.to_string(), w)).collect();
                        json_response(200, &weights).with_header(header("X-Render-Millis", &millis.to_string()))
                    }
                },
            };
            req.respond(response)
        }
        (_, "/api/cameras" | "/api/render" | "/api/weights") => req.respond(error_response(405, "method not allowed")),
        _ => req.respond(error_response(404, "not found")),
    };
    if let Err(e) = result {
        log::warn!("{method} {path}: could not respond: {e}");
    }
}
