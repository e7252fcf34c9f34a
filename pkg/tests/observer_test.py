import unittest
from unittest.mock import Mock, call

from tpsfem.observer import Subject


class TestSubject(unittest.TestCase):


    def setUp(self):
        self.subject = Subject()
        self.callback = Mock()


    def test_notify_in_order(self):
        seen = []
        self.subject.register('iteration', lambda x: seen.append(('a', x)))
        self.subject.register('iteration', lambda x: seen.append(('b', x)))
        self.subject.notify('iteration', 1)
        self.assertEqual(seen, [('a', 1), ('b', 1)])


    def test_register_twice_calls_once(self):
        self.subject.register('stop', self.callback)
        self.subject.register('stop', self.callback)
        self.subject.notify('stop', 'tolerance')
        self.callback.assert_called_once_with('tolerance')


    def test_deregister(self):
        self.subject.register('refine', self.callback)
        self.subject.notify('refine', 1, 1, 41)
        self.subject.deregister('refine', self.callback)
        self.subject.notify('refine', 1, 2, 81)
        self.assertEqual(self.callback.call_args_list, [call(1, 1, 41)])


    def test_unknown_event(self):
        self.subject.deregister('nothing', self.callback)
        self.subject.notify('nothing')
        self.callback.assert_not_called()


if __name__ == '__main__':
    unittest.main()
