class Subject:
    """Synchronous event hub: callbacks registered per event name run in registration order."""
    def __init__(self):
        self.events = {}

    def register(self, event, callback):
        callbacks = self.events.setdefault(event, [])
        if callback not in callbacks:
            callbacks.append(callback)

    def deregister(self, event, callback):
        if callback in self.events.get(event, ()):
            self.events[event].remove(callback)

    def notify(self, event, *args):
        for callback in list(self.events.get(event, ())):
            callback(*args)
