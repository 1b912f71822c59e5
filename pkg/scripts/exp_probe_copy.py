"""Probe: how fast does the decoder learn to copy the last seen ID token?

Isolates the value/output pathway (attend to the id slot, emit its token)
from the matching problem. Diagnostic only.
"""

import sys

import torch

from armot.decoder import CausalDecoder, DecoderConfig
from armot.sequence import ContinuousSlot, DiscreteSlot, TokenSequence


def main(layers=6, steps=300, lr=3e-4):
    torch.manual_seed(0)
    K = 64
    decoder = CausalDecoder(DecoderConfig(layers=layers), vocab_size=K + 1, n_ids=K + 1)
    opt = torch.optim.AdamW(decoder.parameters(), lr=lr, weight_decay=0.01)
    g = torch.Generator().manual_seed(1)

    def make_seq():
        the_id = int(torch.randint(0, K, (1,), generator=g))
        slots = [
            ContinuousSlot(torch.randn(128, generator=g), "obj"),
            DiscreteSlot(the_id, "id"),
            ContinuousSlot(torch.randn(128, generator=g), "cur"),
        ]
        return TokenSequence(slots=slots, predict_positions=[3]), the_id

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
        if step % 30 == 0:
            print(f"copy layers={layers} step {step} ce {float(ce.detach()):.4f}", flush=True)


if __name__ == "__main__":
    args = [int(a) if a.isdigit() else float(a) for a in sys.argv[1:]]
    main(*args)
