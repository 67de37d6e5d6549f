"""Export bundles for the interactive threshold explorer, and a read-only
HTTP server exposing them.

A bundle is a directory with a JSON manifest, pre-rendered per-threshold
stems, binary certainty/embedding grids (float32 little-endian), and a
class-argmax decision raster for the disk background. The UI performs no
DSP: everything it shows comes from these files.

Served routes:
    GET /                     UI assets (bundle's ui/ directory, or a stub page)
    GET /manifest             the bundle manifest (JSON)
    GET /audio/<theta>/<class>.wav and /audio/mixture.wav
    GET /maps/<kind>.bin
"""

from __future__ import annotations

import http.server
import json
import shutil
import socketserver
import threading
from pathlib import Path

import numpy as np

from .certainty import bayesian_certainty, hyperbolic_certainty_map, threshold_masks
from .data import DatasetManifest, TrackSpec
from .dsp import Waveform, apply_mask_resynth, stft, write_wav
from .evaluation import TrackEstimates, _track_class_metrics, default_theta_grid
from .model import ModelParams, forward_masks
from .objectives import MetricReport
from .training import load_track_audio

BUNDLE_VERSION = 1

DECISION_RASTER_SIZE = 256


class BundleError(ValueError):
    pass


def _theta_key(theta: float) -> str:
    return f"{theta:.2f}"


def decision_raster(model: ModelParams, size: int = DECISION_RASTER_SIZE) -> np.ndarray:
    """Leaf-class argmax over a grid of normalized disk coordinates.

    Entry -1 marks points outside the unit disk. Only meaningful for 2-D
    hyperbolic models (the UI draws it behind the embedding scatter).
    """
    from . import autodiff as ad
    from .model import head_logits

    config = model.config
    if config.embed_dim != 2 or config.mode != "hyperbolic":
        raise BundleError("decision rasters need a 2-D hyperbolic model")
    axis = np.linspace(-1.0, 1.0, size)
    uu, vv = np.meshgrid(axis, axis, indexing="xy")
    pts = np.stack([uu, vv], axis=-1)
    inside = np.linalg.norm(pts, axis=-1) < 1.0 - 1e-3
    z = pts / np.sqrt(config.curvature)  # normalized disk -> ball coordinates
    z[~inside] = 0.0
    with ad.no_grad():
        params = {k: ad.Tensor(v) for k, v in model.tensors.items()}
        logits = head_logits(ad.Tensor(z.reshape(-1, 2)), params, config, "leaf").value
    raster = np.argmax(logits, axis=-1).astype(np.int8).reshape(size, size)
    raster[~inside] = -1
    return raster


def export_bundle(
    model: ModelParams,
    dataset_root,
    manifest: DatasetManifest,
    track_id: str,
    out_dir,
    thetas: list[float] | None = None,
    mc_passes: int = 0,
    mc_seed: int = 0,
    ui_dir=None,
) -> dict:
    """Render one track's explorer bundle; returns the written manifest."""
    hierarchy = manifest.hierarchy
    track = next((t for t in manifest.all_tracks() if t.track_id == track_id), None)
    if track is None:
        raise BundleError(f"track {track_id!r} not in the dataset manifest")
    grid = default_theta_grid() if thetas is None else sorted(thetas)
    if not grid or grid[0] != 0.0:
        raise BundleError("theta grid must be ascending and start at 0")

    out = Path(out_dir)
    (out / "audio").mkdir(parents=True, exist_ok=True)
    (out / "maps").mkdir(exist_ok=True)

    audio = load_track_audio(dataset_root, track, hierarchy)
    X = stft(audio.mixture, model.config.stft)
    parent_masks, leaf_masks, field_ = forward_masks(X, model)
    cert_norm = hyperbolic_certainty_map(field_, "hyperbolic-norm")
    cert_dist = hyperbolic_certainty_map(field_, "hyperbolic-distance")

    write_wav(out / "audio" / "mixture.wav", audio.mixture)
    class_names = tuple(hierarchy.parents) + tuple(hierarchy.leaves)
    stems: dict[str, dict[str, str]] = {}
    metrics = []
    for theta in grid:
        key = _theta_key(theta)
        tdir = out / "audio" / key
        tdir.mkdir(exist_ok=True)
        pm = threshold_masks(parent_masks, cert_norm, theta)
        lm = threshold_masks(leaf_masks, cert_norm, theta)
        parents = apply_mask_resynth(X, pm)
        leaves = apply_mask_resynth(X, lm)
        rel = {}
        for name, wave in zip(class_names, parents + leaves):
            path = tdir / f"{name}.wav"
            write_wav(path, wave)
            rel[name] = str(path.relative_to(out))
        stems[key] = rel
        est = TrackEstimates([w.samples for w in parents], [w.samples for w in leaves])
        per_class = _track_class_metrics(est, audio, hierarchy)
        report = MetricReport(hierarchy)
        for name, vals in per_class.items():
            report.add(name, vals["si_sdr"], vals["si_sir"], vals["si_sar"])
        metrics.append({"theta": theta, **report.to_dict()})

    T, F = X.shape
    maps: dict[str, dict] = {}

    def write_map(name: str, array: np.ndarray, dtype: str) -> None:
        path = out / "maps" / f"{name}.bin"
        np_dtype = {"float32-le": "<f4", "int8": "i1"}[dtype]
        path.write_bytes(np.ascontiguousarray(array, dtype=np_dtype).tobytes())
        maps[name] = {"file": f"maps/{name}.bin", "dtype": dtype, "shape": list(array.shape)}

    write_map("embeddings", field_.values, "float32-le")
    write_map("hyperbolic-norm", cert_norm.values, "float32-le")
    write_map("hyperbolic-distance", cert_dist.values, "float32-le")
    if mc_passes > 0:
        bay = bayesian_certainty(model, X, mc_passes, seed=mc_seed)
        write_map("bayesian-entropy", bay.values, "float32-le")
    raster = decision_raster(model)
    write_map("decision", raster, "int8")

    if ui_dir is not None:
        shutil.copytree(ui_dir, out / "ui", dirs_exist_ok=True)

    payload = {
        "version": BUNDLE_VERSION,
        "track_id": track_id,
        "sample_rate": manifest.sample_rate,
        "mode": model.config.mode,
        "curvature": model.config.curvature,
        "embed_dim": model.config.embed_dim,
        "classes": {"parents": list(hierarchy.parents), "leaves": list(hierarchy.leaves)},
        "theta_grid": grid,
        "shape": {"frames": T, "freqs": F},
        "audio": {"mixture": "audio/mixture.wav", "stems": stems},
        "metrics": metrics,
        "maps": maps,
        "decision_raster": {"size": DECISION_RASTER_SIZE, "extent": [-1.0, 1.0], "classes": "leaves"},
    }
    (out / "manifest.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    return payload


# -- read-only bundle server -----------------------------------------------------


_CONTENT_TYPES = {
    ".json": "application/json",
    ".wav": "audio/wav",
    ".bin": "application/octet-stream",
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript",
    ".css": "text/css",
    ".map": "application/json",
}

_STUB_PAGE = b"""<!doctype html><title>hypersep bundle</title>
<h1>hypersep bundle</h1>
<p>No UI assets were packaged with this bundle. Available endpoints:</p>
<ul><li><a href="/manifest">/manifest</a></li>
<li>/audio/&lt;theta&gt;/&lt;class&gt;.wav, /audio/mixture.wav</li>
<li>/maps/&lt;kind&gt;.bin</li></ul>
"""


class BundleHandler(http.server.BaseHTTPRequestHandler):
    root: Path  # set on the subclass by make_server

    def log_message(self, fmt, *args):  # keep test output quiet
        pass

    def _send_file(self, path: Path) -> None:
        data = path.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type", _CONTENT_TYPES.get(path.suffix, "application/octet-stream"))
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self):  # noqa: N802 (stdlib naming)
        route = self.path.split("?", 1)[0]
        root = self.root.resolve()
        if route in ("/", "/index.html"):
            index = root / "ui" / "index.html"
            if index.exists():
                return self._send_file(index)
            self.send_response(200)
            self.send_header("Content-Type", "text/html; charset=utf-8")
            self.send_header("Content-Length", str(len(_STUB_PAGE)))
            self.end_headers()
            self.wfile.write(_STUB_PAGE)
            return
        if route == "/manifest":
            target = root / "manifest.json"
        else:
            if ".." in route.split("/") or not any(route.startswith(p) for p in ("/audio/", "/maps/", "/ui/")):
                self.send_error(403)
                return
            target = (root / route.lstrip("/")).resolve()
            if not str(target).startswith(str(root)):
                self.send_error(403)
                return
        if not target.is_file():
            self.send_error(404)
            return
        self._send_file(target)


def make_server(bundle_dir, host: str = "127.0.0.1", port: int = 0) -> socketserver.TCPServer:
    """Threaded, read-only static server over the bundle directory."""
    bundle_dir = Path(bundle_dir)
    if not (bundle_dir / "manifest.json").exists():
        raise BundleError(f"{bundle_dir} has no manifest.json")

    handler = type("BoundBundleHandler", (BundleHandler,), {"root": bundle_dir})

    class Server(socketserver.ThreadingTCPServer):
        allow_reuse_address = True
        daemon_threads = True

    return Server((host, port), handler)


def serve(bundle_dir, host: str = "127.0.0.1", port: int = 8080) -> None:
    """Blocking entry point used by the CLI."""
    server = make_server(bundle_dir, host, port)
    try:
        server.serve_forever()
    finally:
        server.server_close()


def serve_in_background(bundle_dir, host: str = "127.0.0.1") -> tuple[socketserver.TCPServer, str]:
    """Start on an ephemeral port; returns (server, base_url). For tests."""
    server = make_server(bundle_dir, host, 0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, f"http://{host}:{server.server_address[1]}"
