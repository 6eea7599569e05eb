import { StudioApp } from "./ui.js";

const root = document.getElementById("app");
if (!root) {
  throw new Error("missing #app root element");
}
const baseUrl = (window as { LYRICSMITH_API?: string }).LYRICSMITH_API ?? "";
void new StudioApp(root, baseUrl).start();
