// DOM rendering and event wiring for the studio. All state lives in the
// Studio store; this layer only draws it and forwards user intents.

import { ServiceError, StudioClient } from "./api.js";
import type { Badge } from "./badges.js";
import { SONG_FORMS, exportDraft, importDraft, type LineDraft, type SectionDraft } from "./plan.js";
import { Studio } from "./studio.js";
import type { Granularity, TraceEvent } from "./types.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  ...children: (Node | string)[]
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    node.setAttribute(key, value);
  }
  node.append(...children);
  return node;
}

export class StudioApp {
  private studio: Studio;
  private client: StudioClient;
  private root: HTMLElement;
  private traceLines: string[] = [];
  private sessionCounter = 0;
  private wordAnchor: { paragraph: number; line: number; word: number } | null = null;

  constructor(root: HTMLElement, baseUrl = "") {
    this.root = root;
    this.client = new StudioClient(baseUrl);
    this.studio = new Studio(this.client);
  }

  async start(): Promise<void> {
    try {
      const models = await this.client.models();
      const first = models.models[0];
      this.studio.draft.model = first ? first.name : null;
    } catch {
      this.studio.draft.model = null;
    }
    this.render();
  }

  private render(): void {
    this.root.replaceChildren(
      el("div", { class: "columns" },
        this.renderPlanPanel(),
        this.renderDocumentPanel(),
        this.renderSidePanel(),
      ),
    );
  }

  // -- plan builder ------------------------------------------------------------

  private renderPlanPanel(): HTMLElement {
    const draft = this.studio.draft;
    const sections = draft.sections.map((section, s) =>
      this.renderSectionEditor(section, s),
    );
    const input = el("textarea", { rows: "3", placeholder: "input text (steers the lyric's meaning)" });
    input.value = draft.inputText;
    input.addEventListener("input", () => {
      draft.inputText = input.value;
    });

    const layout = el("select", {});
    for (const name of ["back", "front", "both"]) {
      const option = el("option", { value: name }, name);
      if (name === draft.layout) option.setAttribute("selected", "");
      layout.append(option);
    }
    layout.addEventListener("change", () => {
      draft.layout = layout.value as typeof draft.layout;
    });

    const seed = el("input", { type: "number", value: String(draft.seed) });
    seed.addEventListener("input", () => {
      draft.seed = Number(seed.value) || 0;
    });

    const generate = el("button", { class: "primary" }, "Generate");
    generate.addEventListener("click", () => void this.onGenerate());

    const addSection = el("button", {}, "+ section");
    addSection.addEventListener("click", () => {
      draft.sections.push({
        form: "Verse",
        paragraphSyllables: null,
        lines: [{ syllables: 6, segmentation: null }],
      });
      this.render();
    });

    const exportButton = el("button", {}, "Export plan");
    exportButton.addEventListener("click", () => {
      const blob = new Blob([exportDraft(draft)], { type: "application/json" });
      const link = el("a", { href: URL.createObjectURL(blob), download: "plan.json" });
      link.click();
    });

    const importInput = el("input", { type: "file", accept: ".json", style: "display:none" });
    importInput.addEventListener("change", async () => {
      const file = importInput.files?.[0];
      if (!file) return;
      try {
        this.studio.draft = importDraft(await file.text());
        this.render();
      } catch (error) {
        this.showError(String(error));
      }
    });
    const importButton = el("button", {}, "Import plan");
    importButton.addEventListener("click", () => importInput.click());

    return el("section", { class: "panel plan" },
      el("h2", {}, "Plan"),
      input,
      el("div", { class: "row" }, el("label", {}, "layout "), layout, el("label", {}, " seed "), seed),
      ...sections,
      el("div", { class: "row" }, addSection, importButton, importInput, exportButton),
      el("div", { class: "row" }, generate),
      el("div", { class: "errors", id: "plan-errors" }),
    );
  }

  private renderSectionEditor(section: SectionDraft, index: number): HTMLElement {
    const form = el("select", {});
    for (const name of SONG_FORMS) {
      const option = el("option", { value: name }, name);
      if (name === section.form) option.setAttribute("selected", "");
      form.append(option);
    }
    form.addEventListener("change", () => {
      section.form = form.value;
    });

    const remove = el("button", { class: "small" }, "x");
    remove.addEventListener("click", () => {
      this.studio.draft.sections.splice(index, 1);
      this.render();
    });

    const wholeParagraph = el("input", { type: "checkbox" });
    wholeParagraph.checked = section.paragraphSyllables !== null;
    wholeParagraph.addEventListener("change", () => {
      if (wholeParagraph.checked) {
        section.paragraphSyllables = 12;
        section.lines = null;
      } else {
        section.paragraphSyllables = null;
        section.lines = [{ syllables: 6, segmentation: null }];
      }
      this.render();
    });

    const body: HTMLElement[] = [];
    if (section.paragraphSyllables !== null) {
      const total = el("input", { type: "number", value: String(section.paragraphSyllables) });
      total.addEventListener("input", () => {
        section.paragraphSyllables = Number(total.value) || 1;
      });
      body.push(el("div", { class: "row" }, el("label", {}, "paragraph syllables "), total));
    } else {
      (section.lines ?? []).forEach((line, l) => body.push(this.renderLineEditor(section, line, l)));
      const addLine = el("button", { class: "small" }, "+ line");
      addLine.addEventListener("click", () => {
        section.lines = section.lines ?? [];
        section.lines.push({ syllables: 6, segmentation: null });
        this.render();
      });
      body.push(el("div", { class: "row" }, addLine));
    }

    return el("fieldset", { class: "section-editor" },
      el("legend", {}, `section ${index + 1}`),
      el("div", { class: "row" }, form, el("label", {}, " whole paragraph "), wholeParagraph, remove),
      ...body,
    );
  }

  private renderLineEditor(section: SectionDraft, line: LineDraft, index: number): HTMLElement {
    const syllables = el("input", { type: "number", value: String(line.syllables ?? 6) });
    syllables.addEventListener("input", () => {
      line.syllables = Number(syllables.value) || 1;
    });
    const remove = el("button", { class: "small" }, "x");
    remove.addEventListener("click", () => {
      section.lines?.splice(index, 1);
      this.render();
    });
    return el("div", { class: "row line-editor" },
      el("label", {}, `line ${index + 1}: syllables `), syllables, remove,
    );
  }

  // -- document view -----------------------------------------------------------

  private renderDocumentPanel(): HTMLElement {
    const doc = this.studio.document();
    const children: (HTMLElement | string)[] = [el("h2", {}, "Lyrics")];
    const undo = el("button", {}, "Undo");
    undo.addEventListener("click", () => {
      this.studio.undo();
      this.render();
    });
    const redo = el("button", {}, "Redo");
    redo.addEventListener("click", () => {
      this.studio.redo();
      this.render();
    });
    if (!this.studio.session.canUndo) undo.setAttribute("disabled", "");
    if (!this.studio.session.canRedo) redo.setAttribute("disabled", "");
    children.push(el("div", { class: "row" }, undo, redo));

    if (!doc) {
      children.push(el("p", { class: "hint" }, "Build a plan and generate to begin."));
      return el("section", { class: "panel document" }, ...children);
    }

    doc.paragraphs.forEach((paragraph, p) => {
      const header = el("button", { class: "form-header" }, `[${paragraph.form} ${paragraph.form_index}]`);
      header.addEventListener("click", () => {
        this.studio.select(p);
        this.render();
      });
      const lines = paragraph.lines.map((line, l) => {
        const lineButton = el("button", { class: "small" }, "line");
        lineButton.addEventListener("click", () => {
          this.studio.select(p, l);
          this.render();
        });
        const words = line.words.map((word, w) => {
          const cls = this.isSelectedWord(p, l, w) ? "word selected" : "word";
          const span = el("span", { class: cls }, word.text);
          span.addEventListener("click", (event) => {
            this.onWordClick(p, l, w, (event as MouseEvent).shiftKey);
          });
          return span;
        });
        const spaced: (Node | string)[] = [];
        words.forEach((w, i) => {
          if (i > 0) spaced.push(" ");
          spaced.push(w);
        });
        return el("div", { class: this.isSelectedLine(p, l) ? "line selected" : "line" },
          lineButton, " ", ...spaced,
        );
      });
      children.push(
        el("div", { class: this.isSelectedParagraph(p) ? "paragraph selected" : "paragraph" },
          header, ...lines,
        ),
      );
    });
    return el("section", { class: "panel document" }, ...children);
  }

  private isSelectedParagraph(p: number): boolean {
    const sel = this.studio.selection;
    return !!sel && sel.paragraph === p && sel.line === null;
  }

  private isSelectedLine(p: number, l: number): boolean {
    const sel = this.studio.selection;
    return !!sel && sel.paragraph === p && sel.line === l && sel.wordStart === null;
  }

  private isSelectedWord(p: number, l: number, w: number): boolean {
    const sel = this.studio.selection;
    return (
      !!sel && sel.paragraph === p && sel.line === l &&
      sel.wordStart !== null && sel.wordCount !== null &&
      w >= sel.wordStart && w < sel.wordStart + sel.wordCount
    );
  }

  private onWordClick(p: number, l: number, w: number, extend: boolean): void {
    if (extend && this.wordAnchor && this.wordAnchor.paragraph === p && this.wordAnchor.line === l) {
      const start = Math.min(this.wordAnchor.word, w);
      const count = Math.abs(this.wordAnchor.word - w) + 1;
      this.studio.select(p, l, start, count);
    } else {
      this.wordAnchor = { paragraph: p, line: l, word: w };
      this.studio.select(p, l, w, 1);
    }
    this.render();
  }

  // -- side panel: badges, infill, trace ----------------------------------------

  private renderSidePanel(): HTMLElement {
    const children: HTMLElement[] = [el("h2", {}, "Segments")];
    children.push(this.renderBadges(this.studio.badges));
    const sel = this.studio.selection;
    if (sel) {
      children.push(this.renderInfillForm());
    }
    if (this.studio.alternatives.length > 0) {
      children.push(this.renderAlternatives());
    }
    children.push(el("h2", {}, "Trace"));
    const trace = el("pre", { class: "trace" }, this.traceLines.slice(-200).join("\n"));
    children.push(trace);
    return el("section", { class: "panel side" }, ...children);
  }

  private renderBadges(badges: Badge[]): HTMLElement {
    const list = el("div", { class: "badges" });
    for (const badge of badges) {
      const cls = badge.ok ? "badge ok" : "badge bad";
      const label = `${badge.granularity} ${badge.realized}/${badge.requested}` +
        (badge.timedOut ? " (timeout)" : "");
      list.append(el("span", { class: cls, title: badge.text }, label));
    }
    if (badges.length === 0) {
      list.append(el("span", { class: "hint" }, "no segments yet"));
    }
    return list;
  }

  private renderInfillForm(): HTMLElement {
    const current = this.studio.selectionCurrentSyllables();
    const target = el("input", { type: "number", value: String(current) });
    const samples = el("input", { type: "number", value: "3", min: "1", max: "16" });
    const granularity = el("select", {});
    for (const g of ["word", "phrase", "line", "paragraph"] as Granularity[]) {
      const option = el("option", { value: g }, g);
      if (this.studio.selection?.granularity === g) option.setAttribute("selected", "");
      granularity.append(option);
    }
    granularity.addEventListener("change", () => {
      const sel = this.studio.selection;
      if (sel) {
        this.studio.select(
          sel.paragraph, sel.line, sel.wordStart, sel.wordCount,
          granularity.value as Granularity,
        );
      }
    });
    const go = el("button", { class: "primary" }, "Infill selection");
    go.addEventListener("click", () => {
      void this.onInfill(Number(target.value) || current, Number(samples.value) || 1);
    });
    return el("div", { class: "infill-form" },
      el("h3", {}, "Infill"),
      el("div", { class: "row" }, el("label", {}, "granularity "), granularity),
      el("div", { class: "row" }, el("label", {}, "syllables "), target),
      el("div", { class: "row" }, el("label", {}, "samples "), samples),
      el("div", { class: "row" }, go),
    );
  }

  private renderAlternatives(): HTMLElement {
    const wrap = el("div", { class: "alternatives" }, el("h3", {}, "Alternatives"));
    this.studio.alternatives.forEach((alt, index) => {
      const text = alt.segments.map((s) => `${s.text} (${s.realized}/${s.requested})`).join(" | ");
      const accept = el("button", {}, "accept");
      accept.addEventListener("click", () => {
        this.studio.acceptAlternative(index);
        this.render();
      });
      wrap.append(el("div", { class: "row alternative" }, accept, " ", text));
    });
    return wrap;
  }

  // -- actions -------------------------------------------------------------------

  private async onGenerate(): Promise<void> {
    const sessionId = `studio-${Date.now()}-${this.sessionCounter++}`;
    this.traceLines = [];
    const streaming = this.followSession(sessionId);
    try {
      await this.studio.runGenerate(sessionId);
    } catch (error) {
      this.showError(this.describeError(error));
    }
    await streaming.catch(() => undefined);
    this.render();
  }

  private async onInfill(target: number, samples: number): Promise<void> {
    const sessionId = `studio-${Date.now()}-${this.sessionCounter++}`;
    const streaming = this.followSession(sessionId);
    try {
      await this.studio.requestInfill(target, samples, this.studio.draft.seed, sessionId);
    } catch (error) {
      this.showError(this.describeError(error));
    }
    await streaming.catch(() => undefined);
    this.render();
  }

  private async followSession(sessionId: string): Promise<void> {
    // Poll until the session exists, then stream events into the trace panel.
    for (let attempt = 0; attempt < 50; attempt++) {
      try {
        await this.client.stream(sessionId, (event: TraceEvent) => {
          if (event.type === "token") {
            this.traceLines.push(`${event.provenance ?? "?"}  ${event.value ?? ""}`);
          } else if (event.type === "done") {
            this.traceLines.push(`done (timeouts: ${event.truncated_segments ?? 0})`);
          }
        });
        return;
      } catch {
        await new Promise((resolve) => setTimeout(resolve, 100));
      }
    }
  }

  private describeError(error: unknown): string {
    if (error instanceof ServiceError) {
      return `service ${error.status}: ${JSON.stringify(error.payload)}\nrequest: ${JSON.stringify(error.request)}`;
    }
    return String(error);
  }

  private showError(message: string): void {
    const target = this.root.querySelector("#plan-errors");
    if (target) {
      target.textContent = message;
    } else {
      console.error(message);
    }
  }
}
