"""Probe: attend-to-most-similar-history-token identity matching. Diagnostic."""

import sys

import torch

from armot.decoder import CausalDecoder, DecoderConfig
from armot.sequence import ContinuousSlot, DiscreteSlot, TokenSequence


def main(steps=600, lr=3e-4, k_ids=64, noise=0.1):
    torch.manual_seed(0)
    decoder = CausalDecoder(DecoderConfig(), vocab_size=k_ids + 1, n_ids=k_ids + 1)
    opt = torch.optim.AdamW(decoder.parameters(), lr=lr, weight_decay=0.01)
    g = torch.Generator().manual_seed(1)

    def make_seq():
        n = int(torch.randint(2, 5, (1,), generator=g))
        hist = torch.randn(n, 128, generator=g)
        ids = torch.randperm(k_ids, generator=g)[:n].tolist()
        slots = []
        for i in range(n):
            slots.append(ContinuousSlot(hist[i], f"obj{i}"))
            slots.append(DiscreteSlot(ids[i], f"id{i}"))
        k = int(torch.randint(0, n, (1,), generator=g))
        cur = hist[k] + noise * torch.randn(128, generator=g)
        slots.append(ContinuousSlot(cur, "cur"))
        return TokenSequence(slots=slots, predict_positions=[len(slots)]), ids[k]

    for step in range(steps + 1):
        logits_all, targets = [], []
        for _ in range(16):
            seq, target = make_seq()
            logits, _ = decoder(seq)
            logits_all.append(logits)
            targets.append(target)
        ce = torch.nn.functional.cross_entropy(
            torch.cat(logits_all), torch.tensor(targets)
        )
        opt.zero_grad()
        ce.backward()
        opt.step()
        if step % 50 == 0:
            print(f"match step {step} ce {float(ce.detach()):.4f}", flush=True)


if __name__ == "__main__":
    main(*[int(a) if a.isdigit() else float(a) for a in sys.argv[1:]])
