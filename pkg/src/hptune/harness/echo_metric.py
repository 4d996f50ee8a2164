"""Reports ``metric_val_loss``: ``--value`` if given, else the squared distance of the
numeric flags from 0.5. Prints a few progress lines (one of them JSON) first."""

from . import emit, parse_flags


def main(argv=None) -> int:
    flags = parse_flags(argv)
    print("starting echo run", flush=True)
    emit({"progress": 0.5})
    if "value" in flags:
        loss = float(flags["value"])
    else:
        loss = 0.0
        for name, text in flags.items():
            if name == "seed":
                continue
            try:
                loss += (float(text) - 0.5) ** 2
            except ValueError:
                pass
    print("done", flush=True)
    emit({"metric_val_loss": loss, "metric_val_acc": 1.0 / (1.0 + loss)})
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
