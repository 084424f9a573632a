"""Command-line entry point: run the adapter server."""

from __future__ import annotations

import argparse

from .config import AdapterConfig, Pooling
from .server import make_server


def main(argv=None):
    parser = argparse.ArgumentParser(description="embedding wire-protocol server")
    parser.add_argument("--model-id", default="hashing",
                        help="'hashing' or a local transformers checkpoint path")
    parser.add_argument("--pooling", choices=[p.value for p in Pooling],
                        default=Pooling.LAST_TOKEN.value)
    parser.add_argument("--dim", type=int, default=384)
    parser.add_argument("--max-tokens", type=int, default=256)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8090)
    args = parser.parse_args(argv)
    cfg = AdapterConfig(model_id=args.model_id, pooling=Pooling(args.pooling),
                        dim=args.dim, max_tokens=args.max_tokens, device=args.device)
    server = make_server(cfg, args.host, args.port)
    host, port = server.server_address
    print(f"serving {cfg.model_id} (dim {cfg.dim}) on {host}:{port}")
    server.serve_forever()


if __name__ == "__main__":
    main()
