export interface HistoryEntry {
  id: string;
  label: string;
  filename: string;
}

/** Session-scoped list of past result ids, newest first. */
export class History {
  entries: HistoryEntry[] = [];
  private selected: string | null = null;

  add(entry: HistoryEntry): void {
    this.entries = [entry, ...this.entries.filter((e) => e.id !== entry.id)];
  }

  select(id: string): void {
    this.selected = id;
  }

  render(root: HTMLElement, onSelect: (id: string) => void): void {
    root.innerHTML = "";
    if (this.entries.length === 0) {
      const empty = document.createElement("p");
      empty.className = "history-empty";
      empty.textContent = "no results yet this session";
      root.appendChild(empty);
      return;
    }
    const list = document.createElement("ul");
    list.className = "history-list";
    for (const entry of this.entries) {
      const item = document.createElement("li");
      item.dataset.id = entry.id;
      if (entry.id === this.selected) item.classList.add("selected");
      const button = document.createElement("button");
      button.type = "button";
      button.textContent = `${entry.filename} — ${entry.label}`;
      button.addEventListener("click", () => onSelect(entry.id));
      item.appendChild(button);
      list.appendChild(item);
    }
    root.appendChild(list);
  }
}
