// Edit session: the current document plus an undo/redo history. Every entry
// is an exact service response document; the UI never edits text locally.

import type { DocumentJson } from "./types.js";

export interface HistoryEntry {
  document: DocumentJson;
  label: string;
}

export class EditSession {
  private entries: HistoryEntry[] = [];
  private index = -1;

  get canUndo(): boolean {
    return this.index > 0;
  }

  get canRedo(): boolean {
    return this.index < this.entries.length - 1;
  }

  get length(): number {
    return this.entries.length;
  }

  current(): DocumentJson | null {
    return this.index >= 0 ? this.entries[this.index]!.document : null;
  }

  currentLabel(): string | null {
    return this.index >= 0 ? this.entries[this.index]!.label : null;
  }

  apply(document: DocumentJson, label: string): void {
    this.entries = this.entries.slice(0, this.index + 1);
    this.entries.push({ document, label });
    this.index = this.entries.length - 1;
  }

  undo(): DocumentJson | null {
    if (!this.canUndo) {
      return null;
    }
    this.index -= 1;
    return this.entries[this.index]!.document;
  }

  redo(): DocumentJson | null {
    if (!this.canRedo) {
      return null;
    }
    this.index += 1;
    return this.entries[this.index]!.document;
  }

  labels(): string[] {
    return this.entries.map((e) => e.label);
  }
}
