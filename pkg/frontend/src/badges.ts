// Per-segment compliance badges: requested vs realized syllables, plus a
// timeout flag recovered from the decode sequence's provenance tags.

import type { Granularity, SegmentReport, SequenceItem } from "./types.js";

export interface Badge {
  granularity: Granularity;
  requested: number;
  realized: number;
  ok: boolean;
  timedOut: boolean;
  text: string;
}

const SIMPLE_DIRECTIVES = new Set([
  "<GEN_P>", "<GEN_L>", "<INF_P>", "<INF_L>", "<INF_N>", "<INF_W>", "<MASK>",
]);
const SEGMENT_DIRECTIVES = new Set(["<GEN_N>", "<GEN_W>"]);
const END_TOKENS = new Set(["<END_P>", "<END_L>", "<END_NW>"]);

/**
 * Timeout flags in segment order (matching the server's segments array).
 * Directives open segments; the provenance of the end token that closes each
 * one tells whether it was injected at the budget. A <GEN_L_NW> line is a
 * composite whose flag is the OR of its segments' flags.
 */
export function segmentTimeouts(sequence: SequenceItem[]): boolean[] {
  const flags: boolean[] = [];
  const pending: number[] = []; // stack of open badge slots awaiting an end token
  let composite: number | null = null;
  for (const item of sequence) {
    if (item.token === undefined) {
      continue;
    }
    if (SIMPLE_DIRECTIVES.has(item.token)) {
      flags.push(false);
      pending.push(flags.length - 1);
    } else if (item.token === "<GEN_L_NW>") {
      flags.push(false);
      composite = flags.length - 1;
    } else if (SEGMENT_DIRECTIVES.has(item.token)) {
      flags.push(false);
      pending.push(flags.length - 1);
    } else if (END_TOKENS.has(item.token)) {
      const injected = item.provenance === "injected_on_timeout";
      if (pending.length > 0) {
        const slot = pending.pop()!;
        if (injected) {
          flags[slot] = true;
          if (composite !== null && slot > composite) {
            flags[composite] = true;
          }
        }
      }
      if (item.token === "<END_L>" && pending.length === 0) {
        composite = null;
      }
    }
  }
  return flags;
}

export function buildBadges(
  segments: SegmentReport[],
  sequence: SequenceItem[],
): Badge[] {
  const timeouts = segmentTimeouts(sequence);
  return segments.map((segment, index) => ({
    granularity: segment.granularity,
    requested: segment.requested,
    realized: segment.realized,
    ok: segment.requested === segment.realized,
    timedOut: timeouts[index] ?? false,
    text: segment.text,
  }));
}
