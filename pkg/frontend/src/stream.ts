// Line-delimited JSON stream parsing for the decode-trace endpoint.

import type { TraceEvent } from "./types.js";

/** Incremental NDJSON splitter: feed arbitrary chunks, get whole events. */
export class NdjsonParser {
  private buffer = "";

  push(chunk: string): TraceEvent[] {
    this.buffer += chunk;
    const events: TraceEvent[] = [];
    let newline = this.buffer.indexOf("\n");
    while (newline >= 0) {
      const line = this.buffer.slice(0, newline).trim();
      this.buffer = this.buffer.slice(newline + 1);
      if (line.length > 0) {
        events.push(JSON.parse(line) as TraceEvent);
      }
      newline = this.buffer.indexOf("\n");
    }
    return events;
  }

  flush(): TraceEvent[] {
    const tail = this.buffer.trim();
    this.buffer = "";
    return tail ? [JSON.parse(tail) as TraceEvent] : [];
  }
}

export async function followTrace(
  response: Response,
  onEvent: (event: TraceEvent) => void,
): Promise<void> {
  const reader = response.body?.getReader();
  if (!reader) {
    throw new Error("stream response has no body");
  }
  const decoder = new TextDecoder();
  const parser = new NdjsonParser();
  for (;;) {
    const { done, value } = await reader.read();
    if (done) {
      break;
    }
    for (const event of parser.push(decoder.decode(value, { stream: true }))) {
      onEvent(event);
    }
  }
  for (const event of parser.flush()) {
    onEvent(event);
  }
}
